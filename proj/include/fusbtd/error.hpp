#pragma once

#include <stdexcept>
#include <string>

namespace fusbtd {

// Base for every error raised by the library. `stage()` names the pipeline
// step that raised it so the CLI can report stage-tagged messages.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

#define FUSBTD_DEFINE_ERROR(Name, Stage)                                  \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(Stage, what) {}    \
    };

FUSBTD_DEFINE_ERROR(ParameterError, "hrf")
FUSBTD_DEFINE_ERROR(NoInteriorPeakError, "hrf")
FUSBTD_DEFINE_ERROR(ShapeError, "hrf")
FUSBTD_DEFINE_ERROR(DimensionError, "dimension")
FUSBTD_DEFINE_ERROR(SamplingError, "simulate")
FUSBTD_DEFINE_ERROR(DegenerateScenarioError, "simulate")
FUSBTD_DEFINE_ERROR(EstimationError, "lagcorr")
FUSBTD_DEFINE_ERROR(DivergenceError, "decompose")
FUSBTD_DEFINE_ERROR(PipelineError, "decompose")
FUSBTD_DEFINE_ERROR(StabilityError, "select")
FUSBTD_DEFINE_ERROR(RankError, "recover")
FUSBTD_DEFINE_ERROR(ThresholdError, "evaluate")
FUSBTD_DEFINE_ERROR(UndefinedFanoError, "evaluate")
FUSBTD_DEFINE_ERROR(IngestionError, "ingest")
FUSBTD_DEFINE_ERROR(ConfigError, "config")
FUSBTD_DEFINE_ERROR(OutputError, "output")

#undef FUSBTD_DEFINE_ERROR

}  // namespace fusbtd
