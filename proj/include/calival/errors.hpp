#pragma once

#include <stdexcept>
#include <string>

namespace calival {

// Bad caller input: dimension mismatch, out-of-range value, malformed file.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numerical procedure could not produce a usable result (singular
// covariance, collapsed sampler, failed factorization).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Pipeline orchestration failures: missing upstream stage, checksum mismatch,
// locked output directory.
class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string stage, const std::string& what)
        : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace calival
