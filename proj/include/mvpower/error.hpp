#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvpower {

enum class ErrorKind { parse, validation, dimension, numeric, io };

std::string_view kind_name(ErrorKind kind);

/// Base exception for every failure surfaced by the library. The kind
/// drives the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error parse_error(const std::string& what) { return {ErrorKind::parse, what}; }
inline Error validation_error(const std::string& what) { return {ErrorKind::validation, what}; }
inline Error dimension_error(const std::string& what) { return {ErrorKind::dimension, what}; }
inline Error numeric_error(const std::string& what) { return {ErrorKind::numeric, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::io, what}; }

}  // namespace mvpower
