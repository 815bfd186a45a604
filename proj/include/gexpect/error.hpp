#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gexpect {

enum class ErrorKind {
    Domain,         // argument outside the mathematical domain of an operation
    Configuration,  // grid/stability setup that cannot run (CFL, driver coupling)
    Data,           // non-finite or otherwise unusable input samples
    Capability,     // request beyond a declared capability (e.g. too many cylinder times)
    Usage,          // shape or grid mismatch between arguments
    Extrapolation,  // evaluation outside the covered grid
    Numeric,        // iterative procedure failed (e.g. bisection did not bracket)
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace gexpect
