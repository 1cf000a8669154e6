#pragma once

#include <stdexcept>
#include <string>

namespace kvsim {

/// Base class for every error raised by the simulator.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KVSIM_DEFINE_ERROR(Name)            \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

KVSIM_DEFINE_ERROR(ConfigError);
KVSIM_DEFINE_ERROR(IoError);
KVSIM_DEFINE_ERROR(InsufficientBlocks);
KVSIM_DEFINE_ERROR(UnknownRequest);
KVSIM_DEFINE_ERROR(DuplicateId);
KVSIM_DEFINE_ERROR(QuotaExceeded);
KVSIM_DEFINE_ERROR(TraceParseError);
KVSIM_DEFINE_ERROR(UnknownPreset);
KVSIM_DEFINE_ERROR(WindowTooShort);
KVSIM_DEFINE_ERROR(InsufficientCoverage);
KVSIM_DEFINE_ERROR(NotFinished);
KVSIM_DEFINE_ERROR(EmptyInput);
KVSIM_DEFINE_ERROR(ZeroBaseline);

#undef KVSIM_DEFINE_ERROR

}  // namespace kvsim
