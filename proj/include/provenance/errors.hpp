#pragma once

#include <stdexcept>
#include <string>

namespace provenance {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corpus and manifest problems: duplicate ids, dangling references,
// checksum mismatch, unsupported versions.
class CorpusError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Network or remote-service failure. Callers may retry a bounded number of times.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Misconfiguration between components (dimension or embedder identity
// disagreement). Never retried.
class MismatchError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace provenance
