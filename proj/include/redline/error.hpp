#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace redline {

enum class ErrorKind {
  io,
  format,
  shape,
  non_finite,
  degenerate,
  domain,
  unavailable,
  bound_violation,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::shape: return "shape";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::domain: return "domain";
    case ErrorKind::unavailable: return "unavailable";
    case ErrorKind::bound_violation: return "bound_violation";
  }
  return "unknown";
}

// Every failure in the library surfaces as this exception. Layer-scoped
// failures carry the index of the offending layer.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what,
        std::optional<std::size_t> layer = std::nullopt)
      : std::runtime_error(format(kind, what, layer)), kind_(kind), layer_(layer) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> layer() const noexcept { return layer_; }

  // Re-raise with a layer index attached (no-op if one is already set).
  Error at_layer(std::size_t layer) const {
    if (layer_) return *this;
    return Error(kind_, bare_message(), layer);
  }

 private:
  static std::string format(ErrorKind kind, const std::string& what,
                            std::optional<std::size_t> layer) {
    std::string out = std::string(to_string(kind)) + ": ";
    if (layer) out += "layer " + std::to_string(*layer) + ": ";
    return out + what;
  }

  std::string bare_message() const {
    std::string msg = what();
    auto pos = msg.find(": ");
    return pos == std::string::npos ? msg : msg.substr(pos + 2);
  }

  ErrorKind kind_;
  std::optional<std::size_t> layer_;
};

}  // namespace redline
