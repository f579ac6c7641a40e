#pragma once

#include <stdexcept>
#include <string>

namespace memnav {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MEMNAV_DEFINE_ERROR(Name)                              \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what) : Error(what) {}    \
  }

// env
MEMNAV_DEFINE_ERROR(ParseError);
MEMNAV_DEFINE_ERROR(DisconnectedMap);
MEMNAV_DEFINE_ERROR(MissingStart);
// autodiff
MEMNAV_DEFINE_ERROR(ShapeMismatch);
MEMNAV_DEFINE_ERROR(NoForwardPass);
MEMNAV_DEFINE_ERROR(MissingGradient);
MEMNAV_DEFINE_ERROR(CheckpointError);
// reachability
MEMNAV_DEFINE_ERROR(InsufficientWalkLength);
// memory
MEMNAV_DEFINE_ERROR(EmptyBuffer);
MEMNAV_DEFINE_ERROR(InvalidIndex);
// policy / rl
MEMNAV_DEFINE_ERROR(NonFiniteLogits);
MEMNAV_DEFINE_ERROR(NonFiniteLoss);
MEMNAV_DEFINE_ERROR(ModeMismatch);
MEMNAV_DEFINE_ERROR(EmptyBufferAfterExploration);
// eval
MEMNAV_DEFINE_ERROR(EmptyGoalSet);
// cli
MEMNAV_DEFINE_ERROR(ConfigError);
MEMNAV_DEFINE_ERROR(MissingCheckpoint);
MEMNAV_DEFINE_ERROR(MalformedLog);

#undef MEMNAV_DEFINE_ERROR

}  // namespace memnav
