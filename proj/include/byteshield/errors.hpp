#pragma once

#include <stdexcept>
#include <string>

namespace byteshield {

// Error categories shared by every module. The C API maps these onto
// bs_status codes one to one.
enum class Errc {
  kInvalidArgument = 1,
  kOutOfRange,
  kIo,
  kPeFormat,
  kModelFormat,
  kManifest,
  kNotDetected,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace byteshield
