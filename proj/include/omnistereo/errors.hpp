#pragma once

#include <stdexcept>
#include <string>

namespace omnistereo {

/// Invalid configuration or arguments. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, corrupt or inconsistent data on disk. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. CLI exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kDivergence = 4;
}  // namespace exit_code

}  // namespace omnistereo
