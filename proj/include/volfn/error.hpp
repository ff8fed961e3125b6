#pragma once

#include <stdexcept>
#include <string>

namespace volfn {

enum class ErrorKind {
    Config,
    Tuning,
    Format,
    Data,
    Size,
    Shape,
    Numeric,
    Domain,
    Degeneracy,
    Estimation,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define VOLFN_DEFINE_ERROR(Name, Kind)                                        \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

VOLFN_DEFINE_ERROR(ConfigError, Config)
VOLFN_DEFINE_ERROR(TuningError, Tuning)
VOLFN_DEFINE_ERROR(FormatError, Format)
VOLFN_DEFINE_ERROR(DataError, Data)
VOLFN_DEFINE_ERROR(SizeError, Size)
VOLFN_DEFINE_ERROR(ShapeError, Shape)
VOLFN_DEFINE_ERROR(NumericError, Numeric)
VOLFN_DEFINE_ERROR(DomainError, Domain)
VOLFN_DEFINE_ERROR(DegeneracyError, Degeneracy)
VOLFN_DEFINE_ERROR(EstimationError, Estimation)

#undef VOLFN_DEFINE_ERROR

// Process exit status for a failure of the given kind.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Tuning:
        return 2;
    case ErrorKind::Format:
    case ErrorKind::Data:
    case ErrorKind::Size:
        return 3;
    default:
        return 4;
    }
}

inline const char* kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Tuning: return "tuning error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Size: return "size error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Degeneracy: return "degeneracy error";
    case ErrorKind::Estimation: return "estimation error";
    }
    return "error";
}

}  // namespace volfn
