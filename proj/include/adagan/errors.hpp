#pragma once

#include <stdexcept>
#include <string>

namespace adagan {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// A precondition of an operation was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// A file did not match its declared binary/text format.
struct FormatError : Error {
    using Error::Error;
};

// Input data is structurally unusable (empty directory, class too small, ...).
struct InputError : Error {
    using Error::Error;
};

// Network construction failed the dry-run shape pass.
struct BuildError : Error {
    using Error::Error;
};

// Experiment configuration is invalid.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem trouble (unwritable path, lock conflicts, ...).
struct IoError : Error {
    using Error::Error;
};

// A training stage failed at runtime.
struct TrainError : Error {
    using Error::Error;
};

}  // namespace adagan
