#pragma once

#include <stdexcept>
#include <string>

namespace microspot {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened or decoded; the message names the path.
class LoadError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DegenerateGeometryError : public Error {
public:
    using Error::Error;
};

class TooShortError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

} // namespace microspot
