#pragma once

#include <stdexcept>
#include <string>

namespace coco {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A vector whose norm is at or below the configured epsilon was normalized.
struct ZeroNormError : Error {
    using Error::Error;
};

// A probe evaluation of a finite-difference oracle produced NaN/Inf.
struct NonFiniteEvaluationError : Error {
    using Error::Error;
};

// Point configuration too degenerate to estimate a transform (collinear,
// coincident, ...).
struct DegenerateConfigurationError : Error {
    using Error::Error;
};

struct CountMismatchError : Error {
    using Error::Error;
};

struct DimMismatchError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; message carries epoch/batch index.
struct NonFiniteLossError : Error {
    using Error::Error;
};

// Blob generator could not place class means far enough apart.
struct PlacementFailureError : Error {
    using Error::Error;
};

// Separation statistics requested on a set with an empty intra or inter split.
struct NoPairsError : Error {
    using Error::Error;
};

// Every region masked an entire probe row during fusion.
struct EmptyFusionError : Error {
    using Error::Error;
};

// A probe row has no unmasked score to take the argmax over.
struct EmptyRowError : Error {
    using Error::Error;
};

struct LengthMismatchError : Error {
    using Error::Error;
};

// Logistic fit impossible: positive and negative scores are identical
// multisets.
struct DegenerateFitError : Error {
    using Error::Error;
};

// Score matrices passed to fusion do not share a probe/gallery id universe.
struct UniverseMismatchError : Error {
    using Error::Error;
};

// Bad key, value or range in a plain-text experiment config.
struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace coco
