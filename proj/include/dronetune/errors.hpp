#pragma once

#include <stdexcept>
#include <string>

namespace dronetune {

/// Bad configuration or usage: unknown keys, invalid values, inapplicable
/// strategy/model pairings. CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: unreadable files, malformed manifests, unsupported WAV
/// encodings, impossible splits. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numeric failure: NaN/Inf detected, singular matrix. CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace dronetune
