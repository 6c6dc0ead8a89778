#pragma once

#include <stdexcept>
#include <string>

namespace attnprompt {

// Categories map one-to-one onto CLI exit codes (see exit_code()).
enum class ErrorKind {
    usage,          // bad flag or argument value
    input_format,   // malformed file, shape mismatch, unreadable input
    numeric,        // non-finite values or a failed identity check
    backend,        // network / LVLM endpoint failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return 2;
        case ErrorKind::input_format: return 3;
        case ErrorKind::numeric: return 4;
        case ErrorKind::backend: return 5;
    }
    return 1;
}

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::input_format: return "input_format";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::backend: return "backend";
    }
    return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace attnprompt
