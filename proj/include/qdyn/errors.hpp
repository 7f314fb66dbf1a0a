#pragma once

#include <stdexcept>
#include <string>

namespace qdyn {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes do not conform; message names the op and both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Bad input file contents; message carries the row index where known.
class IngestError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Simulated vehicle left the sane flight envelope.
class SimDivergedError : public Error {
public:
    using Error::Error;
};

/// Loss went non-finite for too many consecutive iterations.
class TrainingInstabilityError : public Error {
public:
    using Error::Error;
};

} // namespace qdyn
