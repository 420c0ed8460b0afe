#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace myo {

enum class Errc {
  BadMagic,
  Truncated,
  NotFull,
  WrongShape,
  UnknownMovement,
  UnknownClass,
  PortInUse,
  ClientDisconnected,
  TooShort,
  MissingGuide,
  EmptyTrain,
  DegenerateClass,
  ShapeMismatch,
  VersionMismatch,
  CorruptFile,
  EmptyCalibration,
  NotCalibrated,
  DeviceLost,
  DiskFull,
  SchemaVersionMismatch,
  NoModel,
  InvalidTransition,
  SocketError,
  InvalidArgument,
  IoError,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace myo
