#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace prevcc {

// Input errors are problems with the data or the request; numerical errors
// are failures of an estimator on otherwise valid data.
enum class ErrorKind { Input, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, std::string detail = {},
        std::optional<std::size_t> index = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  std::string code_;
  std::optional<std::size_t> index_;
};

[[noreturn]] void input_error(std::string code, std::string detail = {},
                              std::optional<std::size_t> index = std::nullopt);
[[noreturn]] void numerical_error(std::string code, std::string detail = {},
                                  std::optional<std::size_t> index = std::nullopt);

}  // namespace prevcc
