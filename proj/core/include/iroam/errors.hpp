#pragma once

#include <stdexcept>
#include <string>

namespace iroam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define IROAM_DEFINE_ERROR(Name)           \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

IROAM_DEFINE_ERROR(ShapeError);
IROAM_DEFINE_ERROR(NonPositiveDepth);
IROAM_DEFINE_ERROR(PlacementFailure);
IROAM_DEFINE_ERROR(EmptyView);
IROAM_DEFINE_ERROR(IoError);
IROAM_DEFINE_ERROR(OddChannelError);
IROAM_DEFINE_ERROR(EmptyGT);
IROAM_DEFINE_ERROR(InfeasibleError);
IROAM_DEFINE_ERROR(TooFewQueries);
IROAM_DEFINE_ERROR(ZeroVector);
IROAM_DEFINE_ERROR(EmptyDomain);
IROAM_DEFINE_ERROR(NonFiniteLoss);
IROAM_DEFINE_ERROR(ConfigError);

#undef IROAM_DEFINE_ERROR

}  // namespace iroam
