#pragma once

#include <stdexcept>
#include <string>

namespace dysim {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scheduling into the past, runaway event counts.
class EngineError : public SimError {
 public:
  using SimError::SimError;
};

class ConfigError : public SimError {
 public:
  using SimError::SimError;
};

class EncodingError : public SimError {
 public:
  using SimError::SimError;
};

// A component observed a message sequence that the hardware contract forbids.
class ProtocolError : public SimError {
 public:
  using SimError::SimError;
};

class CapacityError : public SimError {
 public:
  using SimError::SimError;
};

}  // namespace dysim
