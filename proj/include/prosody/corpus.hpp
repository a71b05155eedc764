#pragma once

#include "prosody/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prosody {

/// Ordered token inventory with three reserved ids (PAD, MASK, UNK) at the
/// front. Used for both the stressed-phoneme and the subword stream.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kFirstRegular = 3;

  Vocabulary() = default;
  /// Builds a vocabulary from regular symbols; specials are prepended.
  explicit Vocabulary(const std::vector<std::string>& regular);

  int size() const { return static_cast<int>(symbols_.size()); }
  int regular_count() const { return size() - kFirstRegular; }
  const std::string& symbol(int id) const { return symbols_.at(id); }
  int id(const std::string& symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  bool has_mask() const { return size() > kMask && symbols_[kMask] == "<mask>"; }

  /// Restores a vocabulary from its full symbol list (specials included).
  static Vocabulary from_symbols(std::vector<std::string> symbols);

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> symbols_;
};

/// Half-open frame range [start, end) aligned to one phoneme.
struct FrameSpan {
  int start = 0;
  int end = 0;
  int length() const { return end - start; }
  bool operator==(const FrameSpan&) const = default;
};

struct Utterance {
  std::string id;
  int speaker_id = 0;
  std::vector<int> phonemes;
  std::vector<int> bpe;
  std::vector<int> phoneme_word;
  std::vector<int> bpe_word;
  MatrixF features;  // [T_frames x F]
  std::vector<FrameSpan> alignment;

  int n_phonemes() const { return static_cast<int>(phonemes.size()); }
  int n_words() const { return phoneme_word.empty() ? 0 : phoneme_word.back() + 1; }
  int n_frames() const { return static_cast<int>(features.rows()); }
  bool operator==(const Utterance& other) const;
};

struct Corpus {
  Vocabulary phonemes;
  Vocabulary bpe;
  int feature_dim = 0;
  std::vector<Utterance> utterances;
  /// Ground-truth per-speaker offsets when the corpus is synthetic
  /// ([n_speakers x F]); empty otherwise.
  MatrixF planted_speaker_offsets;

  int n_speakers() const;
  bool operator==(const Corpus& other) const;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws CorpusError naming the utterance and the violated invariant.
void validate_utterance(const Utterance& u, const Corpus& corpus);
void validate_corpus(const Corpus& corpus);

struct SyntheticCorpusSpec {
  int n_phoneme_types = 40;
  int n_speakers = 8;
  int n_utterances = 2000;
  std::pair<int, int> utterance_length_range{8, 16};
  std::pair<int, int> word_length_range{2, 5};
  int prosody_context_window = 1;
  int n_prosody_classes = 4;
  int feature_dim = 32;
  /// Drawn once per phoneme occurrence and shared by all of its frames.
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  double template_scale = 1.0;
  double prosody_scale = 0.7;
  double speaker_scale = 0.5;
  /// Independent extra noise on every frame.
  double frame_noise_std = 0.0;
  std::pair<int, int> base_duration_range{2, 5};
  int bpe_vocab_size = 256;

  void validate() const;
};

/// Planted generative structure, exposed for oracles.
struct SyntheticTruth {
  MatrixF phoneme_templates;  // [n_types x F]
  MatrixF prosody_modulation; // [n_classes x F]
  std::vector<double> duration_factor;
  std::vector<int> base_duration;
  MatrixF speaker_offsets;    // [n_speakers x F]
  /// Per utterance, per phoneme prosodic class.
  std::vector<std::vector<int>> prosody_class;
};

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, SyntheticTruth* truth = nullptr);

/// Position class of a phoneme inside its word: 0 single, 1 initial, 2 medial, 3 final.
int word_position_class(int index_in_word, int word_length);

// --- container I/O -------------------------------------------------------

/// Parse failure; `record` is the zero-based utterance record index, or -1
/// for header-level problems.
class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(int record, const std::string& what)
      : std::runtime_error(record >= 0 ? "corpus record " + std::to_string(record) + ": " + what : "corpus header: " + what),
        record_(record) {}
  int record() const { return record_; }

 private:
  int record_;
};

std::string serialize_corpus(const Corpus& corpus);
/// SHA-256 of the serialized container.
std::string corpus_fingerprint(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace prosody
