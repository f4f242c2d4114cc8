#ifndef EFFECTMOD_ERRORS_HPP
#define EFFECTMOD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace effectmod {

// Bad or inconsistent user input: files, schemas, parameter domains.
// The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// A numeric routine failed to produce a usable result (non-convergence,
// overflow of a guarded computation). The CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace effectmod

#endif
