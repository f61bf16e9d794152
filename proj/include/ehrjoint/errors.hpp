#pragma once

#include <stdexcept>
#include <string>

namespace ehrjoint {

// Exit codes used by the CLI; every distinct failure mode has its own code.
enum class ErrorCode : int {
  Generic = 1,
  Usage = 2,
  Validation = 3,
  TimeNotIdentifiable = 4,
  SingularSystem = 5,
  NonIdentifiable = 6,
  Separation = 7,
  Degenerate = 8,
  NotConverged = 9,
  Collinear = 10,
  ZeroExposure = 11,
  TooFewBoot = 12,
  AllResamplesFailed = 13,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

#define EHRJOINT_DEFINE_ERROR(NAME)                                              \
  class NAME : public Error {                                                    \
   public:                                                                       \
    explicit NAME(const std::string& msg) : Error(ErrorCode::NAME, msg) {}       \
  }

EHRJOINT_DEFINE_ERROR(Usage);
EHRJOINT_DEFINE_ERROR(Validation);
EHRJOINT_DEFINE_ERROR(TimeNotIdentifiable);
EHRJOINT_DEFINE_ERROR(SingularSystem);
EHRJOINT_DEFINE_ERROR(NonIdentifiable);
EHRJOINT_DEFINE_ERROR(Separation);
EHRJOINT_DEFINE_ERROR(Degenerate);
EHRJOINT_DEFINE_ERROR(NotConverged);
EHRJOINT_DEFINE_ERROR(Collinear);
EHRJOINT_DEFINE_ERROR(ZeroExposure);
EHRJOINT_DEFINE_ERROR(TooFewBoot);
EHRJOINT_DEFINE_ERROR(AllResamplesFailed);

#undef EHRJOINT_DEFINE_ERROR

}  // namespace ehrjoint
