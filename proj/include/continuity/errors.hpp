#pragma once

#include <stdexcept>
#include <string>

namespace continuity {

// Root of every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An argument lies outside the mathematical domain of an operation.
class InputDomainError : public Error {
public:
    using Error::Error;
};

// The caller invoked an operation in a state where it is not defined
// (for example, evaluating a candidate against an empty history).
class PreconditionError : public Error {
public:
    using Error::Error;
};

class PersistenceError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// A remote backend could not be reached or kept failing after retries.
class BackendUnavailableError : public Error {
public:
    using Error::Error;
};

// A backend answered, but the answer violates the wire contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// A recorded-score lookup missed and the fallback policy is to fail.
class RecordNotFoundError : public Error {
public:
    using Error::Error;
};

// An experiment selected nothing to report on.
class EmptyResultError : public Error {
public:
    using Error::Error;
};

}  // namespace continuity
