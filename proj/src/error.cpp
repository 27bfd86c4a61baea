#include "xdistill/error.hpp"

#include <atomic>
#include <iostream>

namespace xdistill {

namespace {
std::atomic<bool> g_warnings_enabled{true};
std::atomic<int> g_warning_count{0};
}  // namespace

Error::Error(std::string kind, const std::string& message)
    : std::runtime_error(message), kind_(std::move(kind)) {}

const char* to_string(FormatErrc code) noexcept {
  switch (code) {
    case FormatErrc::Io: return "io";
    case FormatErrc::BadMagic: return "bad-magic";
    case FormatErrc::VersionMismatch: return "version-mismatch";
    case FormatErrc::Truncated: return "truncated";
    case FormatErrc::LengthMismatch: return "length-mismatch";
    case FormatErrc::Checksum: return "checksum";
    case FormatErrc::DimensionOverflow: return "dimension-overflow";
    case FormatErrc::CountMismatch: return "count-mismatch";
    case FormatErrc::BadHeader: return "bad-header";
  }
  return "unknown";
}

FormatError::FormatError(FormatErrc code, const std::string& message)
    : Error(to_string(code), message), code_(code) {}

void warn(const std::string& message) {
  ++g_warning_count;
  if (g_warnings_enabled) std::cerr << "xdistill: warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled = enabled; }

int warning_count() { return g_warning_count; }

}  // namespace xdistill
