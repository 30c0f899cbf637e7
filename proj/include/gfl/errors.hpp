#pragma once

#include <stdexcept>
#include <string>

namespace gfl {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension contract violations (mismatched matmul dims, bad reshape, ...).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Sequence longer than a fixed-length projection allows.
class SeqLenError : public Error {
public:
    explicit SeqLenError(const std::string& msg) : Error(msg) {}
};

// Operation requested on a variant that does not support it.
class UnsupportedVariantError : public Error {
public:
    explicit UnsupportedVariantError(const std::string& msg) : Error(msg) {}
};

// Analytic cost model disagrees with instrumented execution.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Malformed input files (model blobs, IDX datasets, JSON configs).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Training loop produced a non-finite loss.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace gfl
