#pragma once

#include <string>
#include <utility>
#include <variant>

namespace toolgym {

// Failure categories. The first five are the ones a backend call can
// surface; the rest cover loading, parsing and state errors elsewhere.
enum class ErrorKind {
  transport,
  timeout,
  rate_limited,
  malformed_output,
  retries_exhausted,
  io_error,
  invalid_input,
  bad_state,
};

struct Error {
  ErrorKind kind = ErrorKind::bad_state;
  std::string detail;
  int attempts = 1;
};

const char* to_string(ErrorKind kind);

// Minimal expected-style carrier. We stay on C++20, so no std::expected.
template <typename T>
class Result {
 public:
  Result(T value) : data_(std::move(value)) {}
  Result(Error error) : data_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<T>(data_); }
  explicit operator bool() const { return ok(); }

  T& value() & { return std::get<T>(data_); }
  const T& value() const& { return std::get<T>(data_); }
  T&& value() && { return std::get<T>(std::move(data_)); }

  Error& error() & { return std::get<Error>(data_); }
  const Error& error() const& { return std::get<Error>(data_); }

  T value_or(T fallback) const& {
    return ok() ? std::get<T>(data_) : std::move(fallback);
  }

 private:
  std::variant<T, Error> data_;
};

struct Unit {};
using VoidResult = Result<Unit>;

inline Error make_error(ErrorKind kind, std::string detail, int attempts = 1) {
  return Error{kind, std::move(detail), attempts};
}

}  // namespace toolgym
