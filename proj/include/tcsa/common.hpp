#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tcsa {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files (manifests, payloads, checkpoints).
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Prompt specification that cannot produce prompts.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

/// A numerical failure during training (NaN/Inf in a loss term).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Mixes two 64-bit values into a well-distributed seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

std::string hex64(std::uint64_t v);

}  // namespace tcsa
