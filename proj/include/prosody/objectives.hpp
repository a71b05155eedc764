#pragma once

// Training objectives and contrastive batch samplers.

#include "prosody/autodiff.hpp"
#include "prosody/corpus.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace prosody {

/// Label of positions that carry no MLM target.
constexpr int kIgnoreLabel = -100;

/// How selected positions are corrupted; fractions must sum to 1.
struct MaskPolicy {
  double mask = 0.8;
  double random = 0.1;
  double keep = 0.1;
};

struct MlmRow {
  std::vector<int> input_ids;
  std::vector<int> labels;
  std::vector<bool> masked;
};

/// Selects every position independently with probability p in (0, 1).
/// Selected positions become <mask>, a uniform regular token, or stay as
/// they are, per `policy`; their label is the original id.
MlmRow mlm_mask(const std::vector<int>& token_ids, const Vocabulary& vocab, double p, Rng& rng,
                const MaskPolicy& policy = {});

/// Mean cross-entropy over labelled rows of logits [positions x V]. With
/// no labelled row the loss is 0 and `*no_targets` is set.
template <class T>
Var<T> mlm_loss(Var<T> logits, const std::vector<int>& labels, bool* no_targets = nullptr);

/// Cosine similarity matrix [N x N] between two row sets.
template <class T>
Var<T> cosine_similarity(Var<T> text, Var<T> audio);

/// Pairwise sigmoid loss (1/N) sum_ij log(1 + exp(-z_ij (t s_ij + b))) over
/// cosine similarities, z = +1 for matched pairs. t is a raw scale.
template <class T>
Var<T> siglip_loss(Var<T> text, Var<T> audio, Var<T> t, Var<T> b);

/// Symmetric softmax cross-entropy over scale * cosine similarities.
template <class T>
Var<T> clip_loss(Var<T> text, Var<T> audio, Var<T> scale);

constexpr double kInitLogitScale = 2.6592600369327779;  // log(1 / 0.07)
constexpr double kInitLogitBias = -10.0;

enum class BatchMode { mixed, same_phoneme };

struct ContrastiveItem {
  int utterance = 0;
  int position = 0;
  int phoneme = 0;
};

struct ContrastiveBatch {
  std::vector<ContrastiveItem> items;
  BatchMode mode = BatchMode::mixed;
  std::uint64_t seed = 0;
};

/// N distinct utterances drawn without replacement, one uniform phoneme
/// position each.
ContrastiveBatch sample_mixed_batch(const Corpus& corpus, int n, Rng& rng);

/// Occurrences of every phoneme id: utterance index -> positions.
class PhonemeIndex {
 public:
  explicit PhonemeIndex(const Corpus& corpus);

  /// Utterances containing `phoneme`, ascending, with their positions.
  const std::vector<std::pair<int, std::vector<int>>>& occurrences(int phoneme) const;
  /// Phoneme ids present in at least `n` distinct utterances, ascending.
  std::vector<int> eligible(int n) const;

 private:
  std::map<int, std::vector<std::pair<int, std::vector<int>>>> by_phoneme_;
};

/// N distinct utterances that contain `phoneme`; the position is uniform
/// among that utterance's occurrences.
ContrastiveBatch sample_same_phoneme_batch(const PhonemeIndex& index, int phoneme, int n, Rng& rng);

}  // namespace prosody
