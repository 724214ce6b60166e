#pragma once

#include <stdexcept>
#include <string>

namespace avb {

// Error taxonomy maps 1:1 onto CLI exit codes (see tools/avibench.cpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad config file, bad CSV/WAV input, violated data invariant.
struct ConfigError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// A pipeline stage was invoked before its inputs exist (or they are stale).
struct StageError : Error {
    using Error::Error;
};

// Non-finite loss, failed Cholesky, and similar numeric breakdowns.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace avb
