#pragma once

#include <stdexcept>
#include <string>

namespace batchlab {

// Invalid configuration or contract violation detected before work starts.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A labeled subset could not be drawn with the requested class balance.
class SplitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The multi-task explicit sampler cannot fit one part per label configuration.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint version mismatch, truncation or shape mismatch.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metrics file is missing columns or rows.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace batchlab
