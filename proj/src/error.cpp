#include "gfb/error.hpp"

namespace gfb {

const char* err_name(Err e) {
  switch (e) {
    case Err::MissingPatch:
      return "MissingPatchError";
    case Err::CorpusSchema:
      return "CorpusSchemaError";
    case Err::LabelDomain:
      return "LabelDomainError";
    case Err::EmptySplit:
      return "EmptySplitError";
    case Err::ChannelCount:
      return "ChannelCountError";
    case Err::ChannelNotFound:
      return "ChannelNotFoundError";
    case Err::Fraction:
      return "FractionError";
    case Err::SampleSize:
      return "SampleSizeError";
    case Err::DegenerateLabel:
      return "DegenerateLabelError";
    case Err::AdapterBypass:
      return "AdapterBypassError";
    case Err::PatchGrid:
      return "PatchGridError";
    case Err::UpsampleConfig:
      return "UpsampleConfigError";
    case Err::MaskRatio:
      return "MaskRatioError";
    case Err::BaselineTuning:
      return "BaselineTuningError";
    case Err::Weight:
      return "WeightError";
    case Err::Probability:
      return "ProbabilityError";
    case Err::Shape:
      return "ShapeError";
    case Err::EmptyEvaluation:
      return "EmptyEvaluationError";
    case Err::MissingBaseline:
      return "MissingBaselineError";
    case Err::RatioDomain:
      return "RatioDomainError";
    case Err::Divergence:
      return "DivergenceError";
    case Err::SharedSubset:
      return "SharedSubsetError";
    case Err::Leakage:
      return "LeakageError";
    case Err::Config:
      return "ConfigError";
    case Err::Io:
      return "IoError";
  }
  return "Error";
}

}  // namespace gfb
