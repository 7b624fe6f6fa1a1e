#pragma once

#include <stdexcept>
#include <string>

namespace jumppath {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Kernel construction / validation.
struct NegativeRateError : Error { using Error::Error; };
struct NonFiniteRateError : Error { using Error::Error; };
struct DiagonalEntryError : Error { using Error::Error; };
struct DuplicateRateEntryError : Error { using Error::Error; };
struct DimensionMismatchError : Error { using Error::Error; };

// Set handling and linear solves.
struct SetsOverlapError : Error { using Error::Error; };
struct EmptySetError : Error { using Error::Error; };
struct ReducibleError : Error { using Error::Error; };
struct UnreachableBoundaryError : Error { using Error::Error; };
struct SolveError : Error { using Error::Error; };

// Finite-horizon pipeline.
struct ImproperTerminalError : Error { using Error::Error; };
struct StepTooLargeError : Error { using Error::Error; };
struct InfiniteValueError : Error { using Error::Error; };

// Controls.
struct ZeroDivisorError : Error { using Error::Error; };
struct NegativeFieldError : Error { using Error::Error; };

// Simulation.
struct StuckAbsorbingError : Error { using Error::Error; };
struct NoPathsError : Error { using Error::Error; };

// File IO.
struct ParseError : Error { using Error::Error; };

}  // namespace jumppath
