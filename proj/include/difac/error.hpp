#pragma once

#include <stdexcept>
#include <string>

namespace difac {

// Every failure surfaces as a typed exception with a human-readable message;
// callers that need to distinguish catch the subclass.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error { using Error::Error; };          // unreadable or unopenable file
struct ParseError : Error { using Error::Error; };       // malformed input row (message carries line number)
struct SchemaError : Error { using Error::Error; };      // structurally valid but inconsistent (e.g. feature width)
struct SplitError : Error { using Error::Error; };       // split quota unsatisfiable (message names the class)
struct DimError : Error { using Error::Error; };         // matrix dimension mismatch
struct NumericError : Error { using Error::Error; };     // non-finite intermediate (message carries layer index)
struct TrainError : Error { using Error::Error; };       // divergence during training (message carries epoch)
struct CapacityError : Error { using Error::Error; };    // K*C exceeds configured output cap
struct ContractError : Error { using Error::Error; };    // precondition violated by the caller
struct MetricError : Error { using Error::Error; };      // metric undefined on this input (message names the class)
struct ConfigError : Error { using Error::Error; };      // invalid or incomplete experiment configuration
struct FetchError : Error { using Error::Error; };       // remote provider failure after retries
struct CacheError : Error { using Error::Error; };       // unreadable/corrupt cache file
struct SampleError : Error { using Error::Error; };      // Monte-Carlo conditioning set came up empty

} // namespace difac
