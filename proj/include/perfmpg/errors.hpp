#pragma once

#include <stdexcept>
#include <string>

namespace perfmpg {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dimensions of a policy/game pair do not agree.
struct ShapeMismatch : Error {
    using Error::Error;
};

/// An environment's response produced an invalid game (environment bug).
struct InvalidResponse : Error {
    using Error::Error;
};

/// A linear system could not be solved to the requested residual.
struct SolveFailure : Error {
    using Error::Error;
};

/// Division by a zero entry of a distribution was requested.
struct DivisionDomain : Error {
    using Error::Error;
};

/// A multiplicative update was asked to start from a boundary policy.
struct BoundaryPolicy : Error {
    using Error::Error;
};

/// An operation over a run history was given no rounds.
struct EmptyHistory : Error {
    using Error::Error;
};

/// A configuration value violates its invariant.
struct ConfigError : Error {
    using Error::Error;
};

/// A document could not be parsed at all.
struct ParseError : Error {
    using Error::Error;
};

/// A parsed document names an invalid field or violates the schema.
struct ValidationError : Error {
    using Error::Error;
};

/// A numeric input contains NaN or infinity.
struct NonFinite : Error {
    using Error::Error;
};

/// An enumeration request exceeds the configured size bound.
struct TooLarge : Error {
    using Error::Error;
};

/// An operation requires agent-independent transitions and the game has none.
struct NotAgentIndependent : Error {
    using Error::Error;
};

} // namespace perfmpg
