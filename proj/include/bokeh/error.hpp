#ifndef BOKEH_ERROR_HPP
#define BOKEH_ERROR_HPP

#include <stdexcept>
#include <string>

namespace bokeh {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input that the caller can fix (malformed names, out-of-range values,
// inconsistent files). The CLI maps these to exit status 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::string token)
        : ValidationError(what + " (offending token: '" + token + "')"), token_(std::move(token)) {}

    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

class UnknownBrandError : public ValidationError {
public:
    explicit UnknownBrandError(const std::string& brand)
        : ValidationError("unknown lens brand '" + brand + "'"), brand_(brand) {}

    const std::string& brand() const noexcept { return brand_; }

private:
    std::string brand_;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Failures of the environment rather than of the input: file system, codecs,
// diverging training. Exit status 2.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class IoError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

} // namespace bokeh

#endif // BOKEH_ERROR_HPP
