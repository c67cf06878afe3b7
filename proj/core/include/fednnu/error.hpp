#pragma once

#include <stdexcept>
#include <string>

namespace fednnu {

// Base of every error the library raises. Subclasses name the failure
// category; the CLI maps categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation's preconditions (empty input, bad flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (plan budget too small, bad config fields).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Broken internal consistency, e.g. a compatible set that references a
// layer no input dict holds.
class InternalError : public Error {
 public:
  using Error::Error;
};

// Peer violated the federation protocol (bad magic, duplicate node,
// architecture drift, shape mismatch on update).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class FramingError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class VersionError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class ChannelClosedError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class ConnectionError : public Error {
 public:
  using Error::Error;
};

// The federation was aborted; every participant discards the round.
class FederationAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace fednnu
