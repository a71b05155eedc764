#include "prosody/objectives.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace prosody {

MlmRow mlm_mask(const std::vector<int>& token_ids, const Vocabulary& vocab, double p, Rng& rng,
                const MaskPolicy& policy) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("mlm_mask: p must lie in (0, 1)");
  if (token_ids.empty()) throw std::invalid_argument("mlm_mask: empty sequence");
  if (!vocab.has_mask()) throw std::invalid_argument("mlm_mask: vocabulary has no <mask> symbol");
  if (policy.mask < 0 || policy.random < 0 || policy.keep < 0 ||
      std::abs(policy.mask + policy.random + policy.keep - 1.0) > 1e-9)
    throw std::invalid_argument("mlm_mask: policy fractions must be non-negative and sum to 1");
  const int regular = vocab.regular_count();

  MlmRow row{token_ids, std::vector<int>(token_ids.size(), kIgnoreLabel), std::vector<bool>(token_ids.size(), false)};
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (!rng.bernoulli(p)) continue;
    row.masked[i] = true;
    row.labels[i] = token_ids[i];
    const double u = rng.uniform();
    if (u < policy.mask)
      row.input_ids[i] = Vocabulary::kMask;
    else if (u < policy.mask + policy.random && regular > 0)
      row.input_ids[i] = Vocabulary::kFirstRegular + static_cast<int>(rng.below(static_cast<std::uint64_t>(regular)));
  }
  return row;
}

template <class T>
Var<T> mlm_loss(Var<T> logits, const std::vector<int>& labels, bool* no_targets) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw std::invalid_argument("mlm_loss: shape mismatch");
  bool any = false;
  for (int l : labels) {
    if (l >= logits.cols()) throw std::out_of_range("mlm_loss: label outside the vocabulary");
    any = any || l >= 0;
  }
  if (no_targets) *no_targets = !any;
  return masked_cross_entropy(logits, labels);
}

template <class T>
Var<T> cosine_similarity(Var<T> text, Var<T> audio) {
  if (text.rows() != audio.rows() || text.cols() != audio.cols())
    throw std::invalid_argument("cosine_similarity: embedding shapes differ");
  return matmul_nt(l2_normalize_rows(text), l2_normalize_rows(audio));
}

template <class T>
Var<T> siglip_loss(Var<T> text, Var<T> audio, Var<T> t, Var<T> b) {
  if (text.rows() < 1) throw std::invalid_argument("siglip_loss: empty batch");
  return sigmoid_pair_loss(cosine_similarity(text, audio), t, b);
}

template <class T>
Var<T> clip_loss(Var<T> text, Var<T> audio, Var<T> scale) {
  if (text.rows() < 2) throw std::invalid_argument("clip_loss: needs at least two pairs");
  return symmetric_softmax_loss(cosine_similarity(text, audio), scale);
}

ContrastiveBatch sample_mixed_batch(const Corpus& corpus, int n, Rng& rng) {
  const int size = static_cast<int>(corpus.utterances.size());
  if (n < 1 || n > size)
    throw std::invalid_argument("sample_mixed_batch: corpus has " + std::to_string(size) + " utterances, need " +
                                std::to_string(n));
  ContrastiveBatch batch;
  batch.mode = BatchMode::mixed;
  std::vector<int> order(size);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - i)));
    std::swap(order[i], order[j]);
    const Utterance& u = corpus.utterances[order[i]];
    const int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(u.n_phonemes())));
    batch.items.push_back({order[i], pos, u.phonemes[pos]});
  }
  return batch;
}

PhonemeIndex::PhonemeIndex(const Corpus& corpus) {
  for (int n = 0; n < static_cast<int>(corpus.utterances.size()); ++n) {
    const auto& u = corpus.utterances[n];
    for (int i = 0; i < u.n_phonemes(); ++i) {
      auto& list = by_phoneme_[u.phonemes[i]];
      if (list.empty() || list.back().first != n) list.push_back({n, {}});
      list.back().second.push_back(i);
    }
  }
}

const std::vector<std::pair<int, std::vector<int>>>& PhonemeIndex::occurrences(int phoneme) const {
  static const std::vector<std::pair<int, std::vector<int>>> none;
  auto it = by_phoneme_.find(phoneme);
  return it == by_phoneme_.end() ? none : it->second;
}

std::vector<int> PhonemeIndex::eligible(int n) const {
  std::vector<int> out;
  for (const auto& [ph, list] : by_phoneme_)
    if (static_cast<int>(list.size()) >= n) out.push_back(ph);
  return out;
}

ContrastiveBatch sample_same_phoneme_batch(const PhonemeIndex& index, int phoneme, int n, Rng& rng) {
  const auto& occ = index.occurrences(phoneme);
  const int size = static_cast<int>(occ.size());
  if (n < 1 || n > size)
    throw std::invalid_argument("sample_same_phoneme_batch: phoneme " + std::to_string(phoneme) + " occurs in " +
                                std::to_string(size) + " utterances, need " + std::to_string(n));
  ContrastiveBatch batch;
  batch.mode = BatchMode::same_phoneme;
  std::vector<int> order(size);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - i)));
    std::swap(order[i], order[j]);
    const auto& [utt, positions] = occ[order[i]];
    const int pos = positions[rng.below(positions.size())];
    batch.items.push_back({utt, pos, phoneme});
  }
  return batch;
}

#define PROSODY_OBJECTIVES(T)                                                  \
  template Var<T> mlm_loss(Var<T>, const std::vector<int>&, bool*);            \
  template Var<T> cosine_similarity(Var<T>, Var<T>);                           \
  template Var<T> siglip_loss(Var<T>, Var<T>, Var<T>, Var<T>);                 \
  template Var<T> clip_loss(Var<T>, Var<T>, Var<T>);

PROSODY_OBJECTIVES(float)
PROSODY_OBJECTIVES(double)

}  // namespace prosody
