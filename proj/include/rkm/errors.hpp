#ifndef RKM_ERRORS_HPP
#define RKM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rkm {

/// Base class for every failure this library reports deliberately.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// -- geometry --------------------------------------------------------------

struct SingularAffine : Error {
    explicit SingularAffine(const std::string& msg) : Error(msg) {}
};

// -- solvers ----------------------------------------------------------------

struct DegenerateConfiguration : Error {
    explicit DegenerateConfiguration(const std::string& msg) : Error(msg) {}
};

// -- keypoint extraction -----------------------------------------------------

struct ZeroMassMap : Error {
    explicit ZeroMassMap(const std::string& msg) : Error(msg) {}
};

struct InsufficientStructure : Error {
    explicit InsufficientStructure(const std::string& msg) : Error(msg) {}
};

struct ConstantVolume : Error {
    explicit ConstantVolume(const std::string& msg) : Error(msg) {}
};

// -- metrics ----------------------------------------------------------------

struct DimMismatch : Error {
    explicit DimMismatch(const std::string& msg) : Error(msg) {}
};

struct UnknownLabel : Error {
    explicit UnknownLabel(const std::string& msg) : Error(msg) {}
};

struct EmptyMask : Error {
    explicit EmptyMask(const std::string& msg) : Error(msg) {}
};

struct MissingLabels : Error {
    explicit MissingLabels(const std::string& msg) : Error(msg) {}
};

// -- I/O ----------------------------------------------------------------------

struct IoFailure : Error {
    explicit IoFailure(const std::string& msg) : Error(msg) {}
};

struct BadMagic : IoFailure {
    explicit BadMagic(const std::string& msg) : IoFailure(msg) {}
};

struct UnsupportedDatatype : IoFailure {
    explicit UnsupportedDatatype(const std::string& msg) : IoFailure(msg) {}
};

struct TruncatedData : IoFailure {
    explicit TruncatedData(const std::string& msg) : IoFailure(msg) {}
};

/// Text-format error carrying the 1-based position of the offending token.
struct ParseError : IoFailure {
    ParseError(int line_, int column_, const std::string& msg)
        : IoFailure("line " + std::to_string(line_) + ", col " + std::to_string(column_) + ": " + msg),
          line(line_),
          column(column_) {}
    int line;
    int column;
};

}  // namespace rkm

#endif
