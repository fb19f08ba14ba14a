#pragma once

#include <stdexcept>
#include <string>

namespace lexfuse {

// Error taxonomy mirrors the CLI exit codes: validation 2, stage 3, io 4.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct stage_error : std::runtime_error {
    explicit stage_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by model backends; the decode engine converts it into the
// configured per-step failure policy instead of letting it escape.
struct client_error : std::runtime_error {
    explicit client_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace lexfuse
