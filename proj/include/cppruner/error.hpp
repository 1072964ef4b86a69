#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cppruner {

/// Shapes, ranks or index sets that do not fit together.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite inputs or a diverging computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
public:
    enum class Kind { bad_magic, truncated, zero_rank, bad_dtype, bad_header, parse };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Text parse failure carrying the 1-based line number.
class ParseError : public FormatError {
public:
    ParseError(std::size_t line, const std::string& what)
        : FormatError(Kind::parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace cppruner
