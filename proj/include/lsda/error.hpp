#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lsda {

enum class ErrorKind {
    Argument,
    Precondition,
    Config,
    Consistency,
    Divergence,
    Io,
    CorruptCheckpoint,
};

// Machine-parsable category name, e.g. "argument" or "config-not-found".
std::string_view kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string category, const std::string& message)
        : std::runtime_error(message), kind_(kind), category_(std::move(category)) {}

    Error(ErrorKind kind, const std::string& message)
        : Error(kind, std::string(kind_name(kind)), message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& category() const noexcept { return category_; }

private:
    ErrorKind kind_;
    std::string category_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace lsda
