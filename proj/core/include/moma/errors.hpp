#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moma {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string & msg) : std::runtime_error(msg) {}
};

// numeric primitives
struct ZeroVectorError    : Error { using Error::Error; };
struct InvalidInputError  : Error { using Error::Error; };
struct ShapeMismatchError : Error { using Error::Error; };

// datasets / training
struct EmptyDatasetError  : Error { using Error::Error; };
struct TooFewSamplesError : Error { using Error::Error; };

class DivergenceError : public Error {
public:
    DivergenceError(const std::string & msg, std::size_t epoch)
        : Error(msg), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

// modules / composition
struct ConfigMismatchError  : Error { using Error::Error; };
struct MissingBackboneError : Error { using Error::Error; };
struct InvalidModuleError   : Error { using Error::Error; };

// hub
struct AlreadyExistsError : Error { using Error::Error; };
struct DuplicateIdError   : Error { using Error::Error; };
struct NotFoundError      : Error { using Error::Error; };
struct CorruptError       : Error { using Error::Error; };
struct EmptyHubError      : Error { using Error::Error; };

// metrics
struct UndefinedCorrelationError : Error { using Error::Error; };

// user input (CSV parsing, flag validation)
struct CsvError : Error { using Error::Error; };

} // namespace moma
