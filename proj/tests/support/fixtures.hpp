#pragma once

#include "prosody/acoustic_encoder.hpp"
#include "prosody/config.hpp"
#include "prosody/corpus.hpp"
#include "prosody/text_encoder.hpp"

namespace prosody::testing {

inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_blocks_per_stream = 1;
  c.n_shared_blocks = 1;
  c.ffn_hidden = 8;
  c.rel_pos_clip = 2;
  c.d_speaker = 4;
  c.modulation_hidden = 4;
  c.d_out = 4;
  c.dropout = 0.0;
  return c;
}

inline AcousticConfig tiny_acoustic_config(int feature_dim = 3) {
  AcousticConfig c;
  c.feature_dim = feature_dim;
  c.channels = 4;
  c.front_kernel = 3;
  c.dilations = {1, 2};
  c.se_bottleneck = 2;
  c.attention_hidden = 3;
  c.d_out = 4;
  c.context_frames = 1;
  return c;
}

inline SyntheticCorpusSpec tiny_corpus_spec(std::uint64_t seed = 1) {
  SyntheticCorpusSpec s;
  s.n_phoneme_types = 6;
  s.n_speakers = 3;
  s.n_utterances = 12;
  s.utterance_length_range = {3, 6};
  s.word_length_range = {1, 4};
  s.feature_dim = 3;
  s.bpe_vocab_size = 10;
  s.seed = seed;
  return s;
}

/// A full training config small enough for a few hundred steps per second.
inline TrainConfig tiny_train_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.model.text = tiny_encoder_config();
  c.model.acoustic = tiny_acoustic_config();
  c.model.speaker_references = 2;
  c.stage1 = {1, 6, 4, 1e-2};
  c.stage2 = {2, 6, 4, 1e-2};
  c.stage3 = {3, 4, 4, 1e-2};
  c.seed = seed;
  return c;
}

/// Overwrites every parameter with small random values so that zero
/// initialized gates do not hide any gradient path.
template <class T>
void randomize(ParameterSet<T>& ps, std::uint64_t seed, double stddev = 0.3) {
  Rng rng(seed);
  for (auto* p : ps.all()) p->value = random_normal<T>(p->value.rows(), p->value.cols(), stddev, rng);
}

}  // namespace prosody::testing
