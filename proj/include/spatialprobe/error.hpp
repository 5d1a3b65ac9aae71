#pragma once

#include <stdexcept>
#include <string>

namespace spatialprobe {

/// Base for every error raised by the harness.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a documented invariant (bad rows, bad templates, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A model adapter broke the request/response contract.
class AdapterError : public Error {
 public:
  AdapterError(const std::string& id, const std::string& what)
      : Error("adapter contract violation for id '" + id + "': " + what), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Missing or malformed file on disk.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Geometric precondition failure (empty box, coincident centroids, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

}  // namespace spatialprobe
