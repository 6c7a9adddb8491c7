#pragma once

#include <stdexcept>
#include <string>

namespace provlm {

// Filesystem and serialization failures. Kept distinct from NumericalError so
// the trainer never mistakes a full disk for a poisoned data chunk.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace provlm
