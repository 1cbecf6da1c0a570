#include "prevcc/error.hpp"

namespace prevcc {

namespace {

std::string compose(const std::string& code, const std::string& detail,
                    std::optional<std::size_t> index) {
  std::string msg = code;
  if (index) msg += "(" + std::to_string(*index) + ")";
  if (!detail.empty()) msg += ": " + detail;
  return msg;
}

}  // namespace

Error::Error(ErrorKind kind, std::string code, std::string detail,
             std::optional<std::size_t> index)
    : std::runtime_error(compose(code, detail, index)),
      kind_(kind),
      code_(std::move(code)),
      index_(index) {}

void input_error(std::string code, std::string detail,
                 std::optional<std::size_t> index) {
  throw Error(ErrorKind::Input, std::move(code), std::move(detail), index);
}

void numerical_error(std::string code, std::string detail,
                     std::optional<std::size_t> index) {
  throw Error(ErrorKind::Numerical, std::move(code), std::move(detail), index);
}

}  // namespace prevcc
