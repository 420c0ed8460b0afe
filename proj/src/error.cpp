#include "myo/error.hpp"

namespace myo {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::Truncated: return "Truncated";
    case Errc::NotFull: return "NotFull";
    case Errc::WrongShape: return "WrongShape";
    case Errc::UnknownMovement: return "UnknownMovement";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::PortInUse: return "PortInUse";
    case Errc::ClientDisconnected: return "ClientDisconnected";
    case Errc::TooShort: return "TooShort";
    case Errc::MissingGuide: return "MissingGuide";
    case Errc::EmptyTrain: return "EmptyTrain";
    case Errc::DegenerateClass: return "DegenerateClass";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::EmptyCalibration: return "EmptyCalibration";
    case Errc::NotCalibrated: return "NotCalibrated";
    case Errc::DeviceLost: return "DeviceLost";
    case Errc::DiskFull: return "DiskFull";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::NoModel: return "NoModel";
    case Errc::InvalidTransition: return "InvalidTransition";
    case Errc::SocketError: return "SocketError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace myo
