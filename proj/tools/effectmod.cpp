#include "effectmod/cli.hpp"

int main(int argc, char** argv) { return effectmod::cli_main(argc, argv); }
