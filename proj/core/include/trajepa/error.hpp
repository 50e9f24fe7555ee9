#pragma once

#include <stdexcept>
#include <string>

namespace trajepa {

// Error categories map onto CLI exit codes: Config/Usage -> 2, Data -> 3,
// everything else -> 1.
enum class ErrorKind { Shape, Config, Data, State, Numeric, Usage };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& msg) {
  throw Error(ErrorKind::Shape, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorKind::Config, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::Data, msg);
}
[[noreturn]] inline void throw_state(const std::string& msg) {
  throw Error(ErrorKind::State, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorKind::Numeric, msg);
}

}  // namespace trajepa
