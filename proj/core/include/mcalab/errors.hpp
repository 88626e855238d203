#pragma once

#include <stdexcept>
#include <string>

namespace mcalab {

// Error taxonomy. Categories map to exit codes in the CLI:
// config/contract problems are caller bugs, format errors carry the
// offending file offset or array name.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidShapeError : Error {
  using Error::Error;
};

struct DegenerateInputError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct InvalidInputError : Error {
  using Error::Error;
};

struct InvalidConfigError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct IncompatibleCheckpointError : Error {
  using Error::Error;
};

struct TrainingDivergenceError : Error {
  using Error::Error;
};

}  // namespace mcalab
