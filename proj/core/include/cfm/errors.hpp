#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfm {

enum class ErrorKind {
    dimension,
    numeric,
    config,
    domain,
    contract,
    index,
    io,
    format,
    checksum,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the engine; `kind()` distinguishes the failure class
// so the command-line front end can map it onto exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        fail(kind, message);
    }
}

}  // namespace cfm
