#pragma once

#include <stdexcept>
#include <string>

namespace dsim {

/// Base for all framework errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad scenario / configuration input.
struct ConfigError : Error {
  using Error::Error;
};

/// Wire / framing / peer misbehaviour.
struct ProtocolError : Error {
  using Error::Error;
};

/// Illegal state-machine transition or causality breach.
struct StateError : Error {
  using Error::Error;
};

/// Simulation-model misuse (unknown job, empty chain, capacity breach...).
struct ModelError : Error {
  using Error::Error;
};

/// No placement target could be determined.
struct PlacementError : Error {
  using Error::Error;
};

/// Conservative progress stalled; names the blocked dependency cycle.
struct DeadlockError : Error {
  using Error::Error;
};

/// Stored artefact fails its hash / completeness check.
struct IntegrityError : Error {
  using Error::Error;
};

}  // namespace dsim
