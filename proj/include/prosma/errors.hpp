#pragma once

#include <stdexcept>
#include <string>

namespace prosma {

/// Tensor extents or operand layouts do not line up.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk input (PGM, checkpoint, split list).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (open/read/write).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace prosma
