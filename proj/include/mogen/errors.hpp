#pragma once

#include <stdexcept>
#include <string>

namespace mogen {

// Error taxonomy used across the library. The CLI maps config_error to
// exit code 2 and everything else to 3.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct domain_error : std::runtime_error {
    explicit domain_error(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct token_error : std::runtime_error {
    explicit token_error(const std::string& msg) : std::runtime_error("token error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace mogen
