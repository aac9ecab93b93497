#pragma once

#include <stdexcept>
#include <string>

namespace gfb {

// Error taxonomy shared by the core and the C API. Each value maps onto a
// contract violation named in the public interfaces.
enum class Err {
  MissingPatch,
  CorpusSchema,
  LabelDomain,
  EmptySplit,
  ChannelCount,
  ChannelNotFound,
  Fraction,
  SampleSize,
  DegenerateLabel,
  AdapterBypass,
  PatchGrid,
  UpsampleConfig,
  MaskRatio,
  BaselineTuning,
  Weight,
  Probability,
  Shape,
  EmptyEvaluation,
  MissingBaseline,
  RatioDomain,
  Divergence,
  SharedSubset,
  Leakage,
  Config,
  Io,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

}  // namespace gfb
