#pragma once

#include <stdexcept>
#include <string>

namespace anoclass {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or map dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller-supplied value violates an operation precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A weights, feature, bank or checkpoint file could not be read.
class LoadError : public Error {
public:
    using Error::Error;
};

/// The loaded model lacks something an operation needs (e.g. layer4 for the direct baseline).
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// The few-shot protocol cannot be honored with the available data.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Dataset directory layout is missing or malformed.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// Category has fewer than two defect types and is skipped.
class ExcludedCategory : public IngestionError {
public:
    using IngestionError::IngestionError;
};

/// Support set has a single shot, so no support remains after removing the query.
class DegenerateEpisode : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

namespace detail {

template <typename E>
inline void require(bool ok, const std::string& message) {
    if (!ok) throw E(message);
}

}  // namespace detail
}  // namespace anoclass
