#pragma once

// The trainable pair (text encoder, acoustic branch) plus the contrastive
// logit scale and bias, sharing one parameter set.

#include "prosody/acoustic_encoder.hpp"
#include "prosody/objectives.hpp"
#include "prosody/text_encoder.hpp"

namespace prosody {

struct ModelConfig {
  EncoderConfig text;
  AcousticConfig acoustic;
  SpeakerSource speaker_source = SpeakerSource::stand_in;
  int speaker_references = 4;
  std::uint64_t speaker_seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
class ProsodyModel {
 public:
  ProsodyModel(const ModelConfig& cfg, int phoneme_vocab, int bpe_vocab, std::uint64_t seed);
  ProsodyModel(const ProsodyModel&) = delete;
  ProsodyModel& operator=(const ProsodyModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  int phoneme_vocab() const { return phoneme_vocab_; }
  int bpe_vocab() const { return bpe_vocab_; }

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const TextEncoder<T>& text() const { return *text_; }
  const AcousticEncoder<T>& acoustic() const { return *acoustic_; }
  Parameter<T>& logit_scale() { return *logit_scale_; }
  Parameter<T>& logit_bias() { return *logit_bias_; }

  /// Conditioning vectors for every speaker of `corpus` under this config.
  MatrixF speaker_table(const Corpus& corpus) const;

 private:
  ModelConfig cfg_;
  int phoneme_vocab_, bpe_vocab_;
  ParameterSet<T> params_;
  std::unique_ptr<TextEncoder<T>> text_;
  std::unique_ptr<AcousticEncoder<T>> acoustic_;
  Parameter<T>* logit_scale_ = nullptr;
  Parameter<T>* logit_bias_ = nullptr;
};

template <class T>
struct PairEmbeddings {
  Var<T> text;   // [N x d_out], row i at item i's sampled position
  Var<T> audio;  // [N x d_out]
};

/// Forward pass of both branches over a contrastive batch. The text side
/// encodes whole utterances and keeps one row per item. `speakers` is the
/// per-speaker table (ignored when AdaLN is disabled).
template <class T>
PairEmbeddings<T> embed_pairs(Tape<T>& tape, const ProsodyModel<T>& model, const Corpus& corpus,
                              const ContrastiveBatch& batch, const MatrixF& speakers, const ForwardOptions& opts = {});

/// Rows of the speaker table for the given utterances; zeros when `table`
/// is empty.
template <class T>
Matrix<T> gather_speakers(const Corpus& corpus, const std::vector<int>& utterances, const MatrixF& table, int d_speaker);

}  // namespace prosody
