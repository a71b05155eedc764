#pragma once

// Acoustic branch: a compact ECAPA-style stack (conv front end,
// squeeze-excitation residual blocks, multi-scale aggregation, attentive
// statistics pooling) mapping a phoneme-centred feature window to a
// fixed-size embedding. Also hosts the speaker stand-in embedder.

#include "prosody/corpus.hpp"
#include "prosody/layers.hpp"

#include <string>
#include <vector>

namespace prosody {

struct AcousticConfig {
  int feature_dim = 32;
  int channels = 64;
  int front_kernel = 5;
  /// One SE-residual block per entry, with that dilation.
  std::vector<int> dilations{2, 3};
  int se_bottleneck = 16;
  int attention_hidden = 64;
  int d_out = 128;
  int context_frames = 0;

  void validate() const;
  bool operator==(const AcousticConfig&) const = default;
};

struct MelWindow {
  std::string utterance_id;
  int center_phoneme_index = 0;
  MatrixF frames;  // [T_w x F]
  int start_frame = 0;
};

/// Frames [max(0, start - c), min(T, end + c)) around phoneme `index`.
MelWindow extract_phoneme_window(const Utterance& u, int index, int context_frames);

template <class T>
class AcousticEncoder {
 public:
  AcousticEncoder(const AcousticConfig& cfg, ParameterSet<T>& store, Rng& rng, const std::string& prefix = "acoustic.");

  const AcousticConfig& config() const { return cfg_; }

  /// Packed windows [sum T_w x F] -> un-normalized embeddings [count x d_out].
  Var<T> forward(Var<T> frames, const Segments& seg) const;

 private:
  struct SeBlock {
    Conv1d<T> conv, pointwise, squeeze, excite;
  };

  AcousticConfig cfg_;
  Conv1d<T> front_;
  std::vector<SeBlock> blocks_;
  Conv1d<T> aggregate_, attn_hidden_, attn_out_, head_;
};

/// Packs window frames row-wise.
template <class T>
Matrix<T> pack_windows(const std::vector<MelWindow>& windows, Segments& seg);

/// Inference on one window; the result has unit L2 norm.
Eigen::RowVectorXf encode_window(const AcousticEncoder<float>& encoder, const MelWindow& window);

/// Fixed linear frame encoder for speaker conditioning: mean over frames
/// of `frames * projection`, averaged over the reference utterances.
class SpeakerEmbedder {
 public:
  /// Random projection F -> d_speaker, scaled by 1/sqrt(F).
  SpeakerEmbedder(int feature_dim, int d_speaker, std::uint64_t seed);
  explicit SpeakerEmbedder(MatrixF projection) : projection_(std::move(projection)) {}

  int d_speaker() const { return static_cast<int>(projection_.cols()); }
  Eigen::RowVectorXf embed(const std::vector<const Utterance*>& references) const;

 private:
  MatrixF projection_;
};

/// Where speaker conditioning vectors come from.
enum class SpeakerSource { stand_in, planted };

/// One conditioning vector per corpus speaker ([n_speakers x d_speaker]).
/// stand_in embeds the first `references` utterances of each speaker;
/// planted copies the generator's offsets and needs d_speaker == F.
MatrixF speaker_table(const Corpus& corpus, SpeakerSource source, int d_speaker, std::uint64_t seed,
                      int references = 4);

}  // namespace prosody
