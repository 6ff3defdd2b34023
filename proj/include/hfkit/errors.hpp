#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hfkit {

// Base class for every error raised by the library. `code()` is the stable
// name used on the wire and in positional submit results.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define HFKIT_DEFINE_ERROR(Name)                                          \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(#Name, what) {}    \
    };

HFKIT_DEFINE_ERROR(InvariantViolation)
HFKIT_DEFINE_ERROR(SchemaVersionError)
HFKIT_DEFINE_ERROR(InvalidState)
HFKIT_DEFINE_ERROR(NotFound)
HFKIT_DEFINE_ERROR(RangeError)
HFKIT_DEFINE_ERROR(CorruptRecord)
HFKIT_DEFINE_ERROR(UnknownTargets)
HFKIT_DEFINE_ERROR(ScaleError)
HFKIT_DEFINE_ERROR(EmptyRanking)
HFKIT_DEFINE_ERROR(NotRelative)
HFKIT_DEFINE_ERROR(ReplayError)
HFKIT_DEFINE_ERROR(Exhausted)
HFKIT_DEFINE_ERROR(ModelRequired)
HFKIT_DEFINE_ERROR(WrongKind)
HFKIT_DEFINE_ERROR(EmptyDataset)
HFKIT_DEFINE_ERROR(LengthMismatch)
HFKIT_DEFINE_ERROR(Degenerate)
HFKIT_DEFINE_ERROR(TooFewObservations)
HFKIT_DEFINE_ERROR(MissingSlice)
HFKIT_DEFINE_ERROR(ConfigError)
HFKIT_DEFINE_ERROR(NoRepeats)
HFKIT_DEFINE_ERROR(Conflict)
HFKIT_DEFINE_ERROR(SessionNotFound)
HFKIT_DEFINE_ERROR(DisabledFeedbackType)
HFKIT_DEFINE_ERROR(InsufficientData)
HFKIT_DEFINE_ERROR(NoCalibrationData)
HFKIT_DEFINE_ERROR(StoreLocked)

#undef HFKIT_DEFINE_ERROR

// Invalid configuration or request field. `field()` is a dotted path.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& reason)
        : Error("ValidationError", field + ": " + reason), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Malformed record text. `position()` is a byte offset into the input.
class ParseError : public Error {
public:
    ParseError(std::size_t position, const std::string& reason)
        : Error("ParseError", "parse error at byte " + std::to_string(position) + ": " + reason),
          position_(position),
          reason_(reason) {}

    std::size_t position() const noexcept { return position_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t position_;
    std::string reason_;
};

}  // namespace hfkit
