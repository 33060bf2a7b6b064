#pragma once

#include <stdexcept>
#include <string>

namespace dtql {

// Misconfigured shapes, specs or option values.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: wrong call order, empty batches, missing prerequisites.
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / serialization problems.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values detected where the training loop must stop.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dtql
