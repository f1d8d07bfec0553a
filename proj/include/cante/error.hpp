#pragma once

#include <stdexcept>
#include <string>

namespace cante {

// Every failure carries a short machine-readable category; the CLI prints it
// as the first token of its single error line.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error("argument", what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

struct UnsupportedError : Error {
  explicit UnsupportedError(const std::string& what) : Error("unsupported", what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// A stage was asked to run before the artifact it consumes exists.
struct DependencyError : Error {
  explicit DependencyError(const std::string& what) : Error("dependency", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace cante
