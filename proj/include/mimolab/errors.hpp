#pragma once

#include <stdexcept>
#include <string>

namespace mimolab {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct CodecError : std::runtime_error {
    explicit CodecError(const std::string& msg) : std::runtime_error("codec error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct SingularMatrixError : std::runtime_error {
    explicit SingularMatrixError(const std::string& msg)
        : std::runtime_error("singular matrix: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error("metric error: " + msg) {}
};

}  // namespace mimolab
