#pragma once

#include <stdexcept>
#include <string>

namespace mm {

// Error categories surfaced through the C API as status codes.
enum class ErrCode {
    invalid = 1,
    io = 2,
    format = 3,
    shape = 4,
    config = 5,
    numeric = 6,
    internal = 7,
};

class MmError : public std::runtime_error {
public:
    MmError(ErrCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrCode code() const { return code_; }

private:
    ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode code, const std::string& msg) { throw MmError(code, msg); }

} // namespace mm
