#pragma once

#include <stdexcept>
#include <string>

namespace opental {

/// Bad user input: missing files, malformed config, infeasible generation spec.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An on-disk artifact (weights, dataset) does not match its format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace opental
