#pragma once

// Speaker-conditioned dual-stream text encoder: a phoneme stream and a
// subword stream, word-level alignment of the subword states onto phonemes,
// shared blocks, LayerNorm and a convolutional output projection.

#include "prosody/corpus.hpp"
#include "prosody/layers.hpp"

#include <string>
#include <vector>

namespace prosody {

struct EncoderConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_blocks_per_stream = 4;
  int n_shared_blocks = 4;
  int ffn_kernel_size = 3;
  int ffn_hidden = 128;
  int rel_pos_clip = 16;
  int d_speaker = 64;
  int d_out = 128;
  /// Hidden width of each block's modulation network.
  int modulation_hidden = 64;
  int projection_kernel = 1;
  double dropout = 0.1;
  bool adaln_enabled = true;

  /// Throws std::invalid_argument on an inconsistent config.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

enum class Stream { phoneme, bpe };

struct ForwardOptions {
  bool train = false;
  /// Dropout source; dropout is skipped when null or not training.
  Rng* rng = nullptr;
};

/// Several utterances packed row-wise. Word indices are made global so that
/// pooling and expansion work on the whole batch at once.
struct TextBatch {
  Segments phoneme_seg;
  Segments bpe_seg;
  std::vector<int> phoneme_ids;
  std::vector<int> bpe_ids;
  std::vector<int> phoneme_word;
  std::vector<int> bpe_word;
  int n_words = 0;

  static TextBatch pack(const std::vector<const Utterance*>& utterances);
  int size() const { return phoneme_seg.count(); }
};

/// Row w = mean of the rows of `hidden` whose word index is w.
template <class T>
Var<T> word_pool(Var<T> hidden, const std::vector<int>& bpe_word, int n_words);
/// Row i = pooled[phoneme_word[i]].
template <class T>
Var<T> word_to_phoneme_expand(Var<T> pooled, const std::vector<int>& phoneme_word);

/// Pre-norm transformer block with relative-position self-attention and a
/// convolutional feed-forward. With AdaLN the norms are modulated by the
/// speaker vector and the residual branches gated; the modulation output
/// layer starts at zero, so a fresh block is the identity.
template <class T>
class EncoderBlock {
 public:
  EncoderBlock(ParameterSet<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);

  /// `speaker_items` is [segments x d_speaker] and `owner` maps each packed
  /// row to its segment. Both are ignored when AdaLN is disabled.
  Var<T> operator()(Var<T> x, const Segments& seg, Var<T> speaker_items, const std::vector<int>& owner,
                    const ForwardOptions& opts) const;

 private:
  EncoderConfig cfg_;
  Conv1d<T> qkv_, out_, ffn1_, ffn2_;
  Parameter<T>* rel_keys_ = nullptr;
  Conv1d<T> mod_hidden_, mod_out_;
  AffineNorm<T> norm1_, norm2_;
};

template <class T>
class TextEncoder {
 public:
  /// Registers all parameters under `prefix` in `store`.
  TextEncoder(const EncoderConfig& cfg, int phoneme_vocab, int bpe_vocab, ParameterSet<T>& store, Rng& rng,
              const std::string& prefix = "text.");

  const EncoderConfig& config() const { return cfg_; }
  int vocab_size(Stream s) const { return s == Stream::phoneme ? phoneme_vocab_ : bpe_vocab_; }

  /// Embedding lookup followed by the stream's blocks. `speakers` holds one
  /// row per segment ([count x d_speaker]). Returns [rows x d_model].
  Var<T> encode_stream(Tape<T>& tape, Stream stream, const std::vector<int>& ids, const Segments& seg,
                       const Matrix<T>& speakers, const ForwardOptions& opts = {}) const;

  /// Full encoder over a packed batch. Returns [total phonemes x d_out].
  Var<T> forward(Tape<T>& tape, const TextBatch& batch, const Matrix<T>& speakers,
                 const ForwardOptions& opts = {}) const;

 private:
  Var<T> speaker_input(Tape<T>& tape, const Matrix<T>& speakers, int count) const;
  Var<T> run_blocks(const std::vector<EncoderBlock<T>>& blocks, Var<T> x, const Segments& seg, Var<T> spk,
                    const ForwardOptions& opts) const;

  EncoderConfig cfg_;
  int phoneme_vocab_, bpe_vocab_;
  Parameter<T>* phoneme_embed_ = nullptr;
  Parameter<T>* bpe_embed_ = nullptr;
  std::vector<EncoderBlock<T>> phoneme_blocks_, bpe_blocks_, shared_blocks_;
  AffineNorm<T> final_norm_;
  Conv1d<T> projection_;
};

struct ProsodyEmbeddingSequence {
  std::string utterance_id;
  MatrixF matrix;  // [T_ph x d_out]
};

/// Inference on one utterance.
ProsodyEmbeddingSequence embed_utterance(const TextEncoder<float>& encoder, const Utterance& u,
                                         const Eigen::RowVectorXf& speaker);

}  // namespace prosody
