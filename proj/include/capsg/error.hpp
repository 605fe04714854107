#pragma once

#include <stdexcept>
#include <string>

namespace capsg {

enum class ErrorKind {
  Shape,      // dimension / structural mismatch
  Argument,   // bad parameter value
  Numerical,  // breakdown during computation (non-SPD, zero row, kink)
  Format,     // malformed binary/JSON input
  Data,       // missing or inconsistent data
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& msg) {
  throw Error(ErrorKind::Shape, msg);
}
[[noreturn]] inline void throw_argument(const std::string& msg) {
  throw Error(ErrorKind::Argument, msg);
}
[[noreturn]] inline void throw_numerical(const std::string& msg) {
  throw Error(ErrorKind::Numerical, msg);
}
[[noreturn]] inline void throw_format(const std::string& msg) {
  throw Error(ErrorKind::Format, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::Data, msg);
}

}  // namespace capsg
