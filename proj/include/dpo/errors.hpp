#pragma once

#include <stdexcept>
#include <string>

namespace dpo {

// Every failure raised by the library derives from Error so callers can
// catch one type; the subclasses name the stage-level error kinds.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };
class WindowError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace dpo
