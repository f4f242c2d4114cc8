#ifndef EFFECTMOD_CSV_HPP
#define EFFECTMOD_CSV_HPP

#include <string>
#include <vector>

namespace effectmod::csv {

// Comma-separated table with a header row. The reference corpus needs no
// quoting; a field containing a comma or quote is rejected at write time.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // row i is file line i+2
};

std::vector<std::string> split_line(const std::string& line, char delim = ',');

Table read_file(const std::string& path);
Table parse(const std::string& text, const std::string& origin);

std::string to_string(const Table& table);
void write_file(const std::string& path, const Table& table);

}  // namespace effectmod::csv

#endif
