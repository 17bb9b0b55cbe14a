#pragma once

#include <stdexcept>
#include <string>

namespace endonav {

// Error categories map onto CLI exit codes: config/parse/usage -> 2,
// solver/runtime -> 3, version -> 4.
enum class ErrorKind { Config, Parse, Usage, Solver, Runtime, Io, Version };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
        case ErrorKind::Config:
        case ErrorKind::Parse:
        case ErrorKind::Usage: return 2;
        case ErrorKind::Version: return 4;
        default: return 3;
        }
    }

private:
    ErrorKind kind_;
};

} // namespace endonav
