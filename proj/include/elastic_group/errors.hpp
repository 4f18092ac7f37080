#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace eg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binding or listening failed.
class SetupError : public Error {
 public:
  SetupError(const std::string& address, const std::string& why)
      : Error("cannot listen on " + address + ": " + why), address_(address) {}
  const std::string& address() const { return address_; }

 private:
  std::string address_;
};

class ConnectError : public Error {
 public:
  using Error::Error;
};

/// A send hit a channel that is closed.
class DeliveryError : public Error {
 public:
  DeliveryError(const std::string& peer, const std::string& why)
      : Error("delivery to " + peer + " failed: " + why), peer_(peer) {}
  const std::string& peer() const { return peer_; }

 private:
  std::string peer_;
};

/// Communication across a superseded membership epoch was refused.
class FencingError : public Error {
 public:
  FencingError(std::uint64_t stale_epoch, std::uint64_t current_epoch, const std::string& detail)
      : Error("fenced: stale epoch " + std::to_string(stale_epoch) + " < current epoch " +
              std::to_string(current_epoch) + (detail.empty() ? "" : " (" + detail + ")")),
        stale_epoch_(stale_epoch),
        current_epoch_(current_epoch) {}
  std::uint64_t stale_epoch() const { return stale_epoch_; }
  std::uint64_t current_epoch() const { return current_epoch_; }

 private:
  std::uint64_t stale_epoch_;
  std::uint64_t current_epoch_;
};

/// The endpoint was closed while an operation was waiting on it.
class ShutdownError : public Error {
 public:
  using Error::Error;
};

class RetiredGroupError : public Error {
 public:
  explicit RetiredGroupError(std::uint64_t epoch)
      : Error("group at epoch " + std::to_string(epoch) + " is retired") {}
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Peers disagreed about a collective call or sent malformed data.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class SpawnError : public Error {
 public:
  explicit SpawnError(const std::string& what, std::vector<int> missing = {})
      : Error(what), missing_(std::move(missing)) {}
  /// child_index values that never registered (empty for other failures).
  const std::vector<int>& missing() const { return missing_; }

 private:
  std::vector<int> missing_;
};

class NotSpawnedError : public Error {
 public:
  NotSpawnedError() : Error("this process was not created by spawn (no bootstrap ticket)") {}
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace eg
