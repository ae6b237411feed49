#pragma once

#include <stdexcept>
#include <string>

namespace imnav {

// One exception type per failure class named in the module contracts. The CLI
// maps UsageError to exit status 2 and everything else to 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct LookupError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct VocabularyError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct SamplingError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };

}  // namespace imnav
