#pragma once

#include <stdexcept>
#include <string>

namespace wz {

// Error taxonomy mirroring the CLI exit codes: configuration problems exit 1,
// data problems exit 2, numeric failures exit 3. Shape/contract violations in
// the numerics layer throw std::invalid_argument and are treated as data
// errors at the CLI boundary.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wz
