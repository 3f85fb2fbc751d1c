#pragma once

#include <stdexcept>
#include <string>

namespace pmrf {

// Base class for all pmrf errors. Every failure mode the library reports
// derives from this, so callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidArgument : Error {
  using Error::Error;
};

// An exclusion could not be placed within the configured attempt budget,
// which usually means the requested packing fraction is too high.
struct PlacementFailure : Error {
  using Error::Error;
};

// No 4-connected fluid path between the inlet and outlet columns.
struct NonPercolating : Error {
  using Error::Error;
};

struct SingularSystem : Error {
  using Error::Error;
};

struct SolverDivergence : Error {
  using Error::Error;
};

struct NonPositiveDiffusivity : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct UntrainedState : Error {
  using Error::Error;
};

// Corrupt or ill-formed on-disk artifact (field file, sample dir, config).
struct FormatError : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

}  // namespace pmrf
