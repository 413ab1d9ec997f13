#pragma once

#include <stdexcept>
#include <string>

namespace gridread {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gridread
