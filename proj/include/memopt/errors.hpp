#pragma once

#include <stdexcept>
#include <string>

namespace memopt {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// model loading / graph structure
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// graph rewriting
struct NoVictimError : Error { using Error::Error; };
struct AlignError : Error { using Error::Error; };
struct StructureError : Error { using Error::Error; };

// codec / storage
struct FormatError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct NotErasedError : Error { using Error::Error; };
struct NotFoundError : Error { using Error::Error; };

// execution
struct PlanMismatchError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };

}  // namespace memopt
