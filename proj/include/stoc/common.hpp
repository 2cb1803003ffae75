#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stoc {

// Error taxonomy. Each category maps to one failure mode of the pipeline so
// callers (and the CLI exit-code logic) can tell user mistakes from bad data
// from runtime blowups.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file (bad magic, truncated payload).
struct FormatError : Error {
  using Error::Error;
};

// Inputs that parse but disagree with each other or with a documented count.
struct ConsistencyError : Error {
  using Error::Error;
};

// Bad function arguments or mismatched model/dataset shapes.
struct ConfigurationError : Error {
  using Error::Error;
};

// A value outside its documented domain.
struct RangeError : Error {
  using Error::Error;
};

// Dataset cannot satisfy a sampling request (class too small, empty pool).
struct SamplingError : Error {
  using Error::Error;
};

// Training produced a non-finite loss or violated a frozen-parameter contract.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace stoc
