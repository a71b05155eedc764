#pragma once

// Stage orchestration: MLM pretraining of the two text streams, mixed
// phoneme contrastive training and same-phoneme refinement, run as plans
// such as "1+2" with a checkpoint after every stage.

#include "prosody/checkpoint.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace prosody {

/// Ordered, strictly increasing subset of {1, 2, 3}. The stage-2 variants
/// "2:clip" (softmax loss) and "2:noadaln" (no speaker conditioning) are
/// the two architecture ablations.
struct CurriculumPlan {
  std::vector<int> stages;
  bool clip = false;
  bool no_adaln = false;

  /// Canonical spelling, e.g. "1+2" or "2:clip".
  std::string label() const;
  /// Row label for reports, e.g. "1+2 stage" or "2 stage (CLIP, w/ AdaLN)".
  std::string display() const;
  /// Label of the first `n` stages with the same variant.
  CurriculumPlan prefix(std::size_t n) const;
};

class PlanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws PlanError listing the accepted spellings.
CurriculumPlan parse_plan(const std::string& text);
const std::vector<std::string>& valid_plans();

/// The configuration a plan actually trains with (variants applied).
TrainConfig apply_plan(TrainConfig cfg, const CurriculumPlan& plan);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResumeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Receives one JSON record per optimizer step:
/// {step, stage, loss, t, b, wall_ms} plus stage-specific fields.
using StepLogger = std::function<void(const nlohmann::json&)>;

struct StageRun {
  const Corpus& corpus;
  StepLogger log;
  /// Global step counter, advanced by one per step.
  long* global_step;
  double clip_norm = 1.0;
  double logit_lr_scale = 1.0;
};

/// Trains each listed stream independently with its own MLM head (the
/// heads are discarded afterwards). Speaker input is the zero vector.
StageRecord run_stage1(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run,
                       const std::vector<Stream>& streams = {Stream::phoneme, Stream::bpe});
/// Mixed-phoneme contrastive training of all parameters.
StageRecord run_stage2(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run);
/// Same-phoneme contrastive refinement; every step draws a phoneme type
/// uniformly among those present in >= batch_size utterances.
StageRecord run_stage3(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run);

/// Seed of stage `stage` under base seed `seed`; independent of the plan
/// so that "1+2" equals "1" followed by "2" from its checkpoint.
std::uint64_t stage_seed(std::uint64_t seed, int stage);
/// Seed of the fresh parameter initialization.
std::uint64_t init_seed(std::uint64_t seed);

struct PlanResult {
  Checkpoint final;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path log_path;
};

/// Runs `plan` with `cfg` (variants applied internally), writing
/// "stage<k>.ckpt" after each stage and appending to "run_log.jsonl" in
/// `out_dir`. With `resume`, its completed stages must be a prefix of the
/// plan, and its corpus, model config, seed and the specs of its finished
/// stages must match, otherwise ResumeMismatch.
PlanResult run_plan(const CurriculumPlan& plan, const Corpus& corpus, const TrainConfig& cfg,
                    const std::filesystem::path& out_dir, const Checkpoint* resume = nullptr,
                    const StepLogger& observer = {});

}  // namespace prosody
