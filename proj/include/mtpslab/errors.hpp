#pragma once

#include <stdexcept>
#include <string>

namespace mtpslab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape / dimension disagreement.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid configuration value (bad flag, incompatible variant, odd head dim, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// Out-of-range index (token id, mask coordinate, cross-entropy target).
struct IndexError : Error {
  using Error::Error;
};

/// Attention mask violation (e.g. a fully masked softmax row).
struct MaskError : Error {
  using Error::Error;
};

/// API contract violation (non-scalar backward, non-contiguous cache extension, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite value where a finite one is required (NaN gradient/loss/logits).
struct NumericError : Error {
  using Error::Error;
};

/// Filesystem-level failure, carries the path.
struct IoError : Error {
  using Error::Error;
};

/// Malformed file contents (bad magic, truncated payload, checksum mismatch, version skew).
struct FormatError : Error {
  using Error::Error;
};

/// Streaming generation needs text that has not been revealed yet.
struct StallError : Error {
  using Error::Error;
};

}  // namespace mtpslab
