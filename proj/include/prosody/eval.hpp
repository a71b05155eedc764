#pragma once

// Within-batch text/audio retrieval: R@k-diff on mixed-phoneme batches and
// R@k-sim on same-phoneme batches, plus the stage-composition grid.

#include "prosody/curriculum.hpp"

#include <functional>
#include <optional>

namespace prosody {

enum class MetricFamily { sim, diff };
enum class Direction { text_to_audio, audio_to_text, mean };

std::string to_string(MetricFamily f);
std::string to_string(Direction d);

/// Fraction of queries whose true match ranks within the top k. Text
/// queries are rows of `sim` and audio queries are columns. Ties go to the
/// lower index. Throws std::invalid_argument for a non-square or empty
/// matrix or any k outside [1, N].
std::vector<double> recall_at_k(const MatrixD& sim, const std::vector<int>& ks, Direction direction);

struct RetrievalReport {
  MetricFamily family = MetricFamily::diff;
  std::vector<int> ks;
  /// Headline values, in the direction below.
  std::vector<double> recall;
  std::vector<double> text_to_audio;
  std::vector<double> audio_to_text;
  Direction direction = Direction::mean;
  int n_batches = 0;
  int batch_size = 0;
  std::uint64_t seed = 0;

  double at(int k) const;
  bool operator==(const RetrievalReport&) const = default;
};

void to_json(nlohmann::json& j, const RetrievalReport& r);

/// Test hook: sees the [N x d_out] text and audio embeddings of every batch
/// before the similarity matrix is formed and may overwrite them.
using EmbeddingHook = std::function<void(MatrixF& text, MatrixF& audio)>;

/// Inference only; the model is not modified. Batch b draws from
/// derive_seed(cfg.seed, b), so batches are independent of each other.
RetrievalReport eval_rk_diff(const ProsodyModel<float>& model, const Corpus& corpus, const EvalConfig& cfg,
                             const EmbeddingHook& hook = {});
/// Same-phoneme batches; the type is drawn uniformly among those found in
/// >= batch_size utterances.
RetrievalReport eval_rk_sim(const ProsodyModel<float>& model, const Corpus& corpus, const EvalConfig& cfg,
                            const EmbeddingHook& hook = {});

// --- ablation grid -----------------------------------------------------------

struct AblationRow {
  std::string plan;     // canonical label
  std::string display;  // table label
  std::uint64_t seed = 0;
  std::optional<RetrievalReport> sim, diff;
  /// Summed stage wall time of the evaluated checkpoint.
  double train_seconds = 0;
  /// Stages taken from an earlier plan's checkpoint instead of retrained.
  std::string reused_prefix;
  std::string checkpoint;
  std::string error;

  bool ok() const { return error.empty(); }
};

void to_json(nlohmann::json& j, const AblationRow& r);

struct GridOptions {
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path work_dir;
  /// Resume from the checkpoint of the longest already trained plan prefix
  /// (bit-identical to training from scratch).
  bool reuse_prefixes = true;
  std::function<void(const std::string&)> progress;
  StepLogger observer;
};

/// Trains and evaluates every plan. A failing plan yields a row carrying
/// its error and the grid continues.
std::vector<AblationRow> run_ablation_grid(const std::vector<CurriculumPlan>& plans, const Corpus& corpus,
                                           const GridOptions& options);

/// Plans of the reference grid in table order.
std::vector<CurriculumPlan> reference_grid();

/// '|'-delimited table: Curriculum, R@1/5/10-sim, R@1/5/10-diff. A rule
/// separates the full "1+2+3" curriculum from the ablations.
std::string render_table(const std::vector<AblationRow>& rows);

}  // namespace prosody
