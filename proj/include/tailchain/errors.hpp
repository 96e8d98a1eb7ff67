#pragma once

#include <stdexcept>
#include <string>

// Error types thrown across the library. Each names the contract it guards so
// callers can catch narrowly; all derive from std::runtime_error.
namespace tailchain {

#define TAILCHAIN_ERROR(Name)                                       \
  struct Name : std::runtime_error {                                \
    explicit Name(const std::string& what) : std::runtime_error(what) {} \
  }

TAILCHAIN_ERROR(ZeroVector);           // normalizing a (near-)zero vector
TAILCHAIN_ERROR(DomainError);          // argument outside an op's domain
TAILCHAIN_ERROR(BadWeights);           // atom weights negative or not summing to 1
TAILCHAIN_ERROR(DimensionMismatch);    // mixed dimensions in one operation
TAILCHAIN_ERROR(NotCanonical);         // measure not in canonical form where required
TAILCHAIN_ERROR(NotAdmissible);        // admissibility precondition failed
TAILCHAIN_ERROR(UnknownAngle);         // conditional requested at an angle with no mass
TAILCHAIN_ERROR(KernelMismatch);       // forward/backward kernels fail the adjointness gate
TAILCHAIN_ERROR(UnboundedFunctional);  // functional exceeded its declared bound
TAILCHAIN_ERROR(NumericOverflow);      // trajectory norm exceeded the overflow cap
TAILCHAIN_ERROR(NoExceedances);        // no windows above the threshold (informational)
TAILCHAIN_ERROR(DegenerateSample);     // sample unusable for the estimator (ties, nonpositive)
TAILCHAIN_ERROR(NotNormalized);        // supplied density does not integrate to 1
TAILCHAIN_ERROR(NoContraction);        // no geometric decay found within the probe horizon
TAILCHAIN_ERROR(RejectionStall);       // rejection sampler acceptance rate collapsed
TAILCHAIN_ERROR(UnsupportedAngle);     // angle outside the supported set of a conditional
TAILCHAIN_ERROR(TooFewWindows);        // not enough blocks for a bootstrap
TAILCHAIN_ERROR(IoError);              // file could not be read/written/parsed

#undef TAILCHAIN_ERROR

}  // namespace tailchain
