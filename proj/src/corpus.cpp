#include "prosody/corpus.hpp"

#include "prosody/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace prosody {

Vocabulary::Vocabulary(const std::vector<std::string>& regular) {
  symbols_ = {"<pad>", "<mask>", "<unk>"};
  std::set<std::string> seen(symbols_.begin(), symbols_.end());
  for (const auto& s : regular) {
    if (!seen.insert(s).second) throw CorpusError("vocabulary: duplicate symbol '" + s + "'");
    symbols_.push_back(s);
  }
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
  if (symbols.size() < 4) throw CorpusError("vocabulary: needs at least one regular symbol");
  if (symbols[kPad] != "<pad>" || symbols[kMask] != "<mask>" || symbols[kUnk] != "<unk>")
    throw CorpusError("vocabulary: reserved ids must be <pad>, <mask>, <unk>");
  return Vocabulary(std::vector<std::string>(symbols.begin() + kFirstRegular, symbols.end()));
}

int Vocabulary::id(const std::string& symbol) const {
  auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  return it == symbols_.end() ? kUnk : static_cast<int>(it - symbols_.begin());
}

namespace {

bool same_matrix(const MatrixF& a, const MatrixF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace

bool Utterance::operator==(const Utterance& o) const {
  return id == o.id && speaker_id == o.speaker_id && phonemes == o.phonemes && bpe == o.bpe &&
         phoneme_word == o.phoneme_word && bpe_word == o.bpe_word && alignment == o.alignment &&
         same_matrix(features, o.features);
}

bool Corpus::operator==(const Corpus& o) const {
  return phonemes == o.phonemes && bpe == o.bpe && feature_dim == o.feature_dim && utterances == o.utterances &&
         same_matrix(planted_speaker_offsets, o.planted_speaker_offsets);
}

int Corpus::n_speakers() const {
  int n = 0;
  for (const auto& u : utterances) n = std::max(n, u.speaker_id + 1);
  return std::max(n, static_cast<int>(planted_speaker_offsets.rows()));
}

void validate_utterance(const Utterance& u, const Corpus& corpus) {
  auto fail = [&](const std::string& what) { throw CorpusError("utterance '" + u.id + "': " + what); };
  const int tph = u.n_phonemes();
  if (tph == 0) fail("no phonemes");
  if (u.bpe.empty()) fail("no subword tokens");
  if (static_cast<int>(u.phoneme_word.size()) != tph) fail("phoneme_word length differs from phoneme count");
  if (u.bpe_word.size() != u.bpe.size()) fail("bpe_word length differs from token count");
  if (static_cast<int>(u.alignment.size()) != tph) fail("alignment length differs from phoneme count");
  if (u.speaker_id < 0) fail("negative speaker id");
  for (int p : u.phonemes)
    if (p < Vocabulary::kFirstRegular || p >= corpus.phonemes.size()) fail("phoneme id out of vocabulary");
  for (int b : u.bpe)
    if (b < Vocabulary::kFirstRegular || b >= corpus.bpe.size()) fail("subword id out of vocabulary");

  auto check_map = [&](const std::vector<int>& m, const char* name) {
    if (m.front() != 0) fail(std::string(name) + " must start at word 0");
    for (std::size_t i = 1; i < m.size(); ++i)
      if (m[i] != m[i - 1] && m[i] != m[i - 1] + 1) fail(std::string(name) + " must be non-decreasing without gaps");
  };
  check_map(u.phoneme_word, "phoneme_word");
  check_map(u.bpe_word, "bpe_word");
  if (u.phoneme_word.back() != u.bpe_word.back()) fail("word count differs between streams");

  if (u.features.cols() != corpus.feature_dim) fail("feature dimension mismatch");
  int prev_end = 0;
  for (const auto& span : u.alignment) {
    if (span.length() < 1) fail("empty alignment span");
    if (span.start < prev_end) fail("alignment spans overlap or are unordered");
    if (span.end > u.n_frames()) fail("alignment span exceeds frame count");
    prev_end = span.end;
  }
}

void validate_corpus(const Corpus& corpus) {
  if (corpus.feature_dim < 1) throw CorpusError("corpus: feature_dim must be positive");
  for (const auto& u : corpus.utterances) validate_utterance(u, corpus);
}

void SyntheticCorpusSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw CorpusError(std::string("synthetic spec: ") + what);
  };
  require(n_phoneme_types >= 1 && n_speakers >= 1 && n_utterances >= 0, "counts must be >= 1");
  require(utterance_length_range.first >= 1 && utterance_length_range.second >= utterance_length_range.first,
          "bad utterance_length_range");
  require(word_length_range.first >= 1 && word_length_range.second >= word_length_range.first, "bad word_length_range");
  require(prosody_context_window >= 1, "prosody_context_window must be >= 1");
  require(n_prosody_classes >= 1, "n_prosody_classes must be >= 1");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(noise_std >= 0.0, "noise_std must be >= 0");
  require(frame_noise_std >= 0.0, "frame_noise_std must be >= 0");
  require(base_duration_range.first >= 1 && base_duration_range.second >= base_duration_range.first,
          "bad base_duration_range");
  require(bpe_vocab_size >= 1, "bpe_vocab_size must be >= 1");
}

int word_position_class(int index_in_word, int word_length) {
  if (word_length == 1) return 0;
  if (index_in_word == 0) return 1;
  if (index_in_word == word_length - 1) return 3;
  return 2;
}

namespace {

MatrixF normal_matrix(int rows, int cols, double stddev, Rng& rng) {
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal() * stddev);
  return m;
}

std::string phoneme_symbol(int type) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%02d", type);
  return buf;
}

std::string subword_symbol(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "B%03d", index);
  return buf;
}

/// Deterministic subword id of a run of phoneme types.
int subword_bucket(const std::vector<int>& piece, std::uint64_t seed, int buckets) {
  std::uint64_t h = derive_seed(seed, 0xB9E);
  for (int p : piece) h = derive_seed(h, static_cast<std::uint64_t>(p));
  return static_cast<int>(h % static_cast<std::uint64_t>(buckets));
}

constexpr int kTemplateRedraws = 256;

bool identifiable(const MatrixF& templates, const MatrixF& modulation, const MatrixF& speakers) {
  for (int t = 0; t < templates.rows(); ++t)
    for (int c = 0; c < modulation.rows(); ++c)
      for (int s = 0; s < speakers.rows(); ++s) {
        const Eigen::RowVectorXf x = templates.row(t) + modulation.row(c) + speakers.row(s);
        const float own = (x - templates.row(t)).squaredNorm();
        for (int o = 0; o < templates.rows(); ++o)
          if (o != t && (x - templates.row(o)).squaredNorm() <= own) return false;
      }
  return true;
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, SyntheticTruth* truth) {
  spec.validate();
  Rng rng(spec.seed);
  const int n_types = spec.n_phoneme_types;
  const int n_classes = spec.n_prosody_classes;
  const int f = spec.feature_dim;
  const int w = spec.prosody_context_window;

  MatrixF templates = normal_matrix(n_types, f, spec.template_scale, rng);
  std::vector<int> base_duration(n_types);
  for (auto& d : base_duration) d = rng.uniform_int(spec.base_duration_range.first, spec.base_duration_range.second);

  // Prosodic class = argmax over classes of summed random scores, one score
  // table per neighbor offset (indexed by neighbor type, or n_types for
  // "outside the utterance") plus one for the word-position class.
  std::vector<MatrixF> neighbor_scores;
  for (int o = 0; o < 2 * w; ++o) neighbor_scores.push_back(normal_matrix(n_types + 1, n_classes, 1.0, rng));
  MatrixF position_scores = normal_matrix(4, n_classes, 1.0, rng);
  MatrixF modulation = normal_matrix(n_classes, f, spec.prosody_scale, rng);
  std::vector<double> duration_factor(n_classes);
  for (int c = 0; c < n_classes; ++c)
    duration_factor[c] = n_classes == 1 ? 1.0 : 0.7 + 0.9 * static_cast<double>(c) / (n_classes - 1);
  MatrixF speaker_offsets = normal_matrix(spec.n_speakers, f, spec.speaker_scale, rng);

  // Redraw templates until every noise-free (type, class, speaker) mean is
  // strictly nearest its own template. Bounded; the last draw is kept.
  for (int attempt = 0; attempt < kTemplateRedraws && !identifiable(templates, modulation, speaker_offsets); ++attempt)
    templates = normal_matrix(n_types, f, spec.template_scale, rng);

  std::vector<std::string> ph_symbols, bpe_symbols;
  for (int t = 0; t < n_types; ++t) ph_symbols.push_back(phoneme_symbol(t));
  for (int b = 0; b < spec.bpe_vocab_size; ++b) bpe_symbols.push_back(subword_symbol(b));

  Corpus corpus;
  corpus.phonemes = Vocabulary(ph_symbols);
  corpus.bpe = Vocabulary(bpe_symbols);
  corpus.feature_dim = f;
  corpus.planted_speaker_offsets = speaker_offsets;
  corpus.utterances.reserve(static_cast<std::size_t>(spec.n_utterances));
  std::vector<std::vector<int>> classes_out;

  for (int n = 0; n < spec.n_utterances; ++n) {
    Utterance u;
    char id[32];
    std::snprintf(id, sizeof id, "utt%05d", n);
    u.id = id;
    u.speaker_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_speakers)));
    const int len = rng.uniform_int(spec.utterance_length_range.first, spec.utterance_length_range.second);
    std::vector<int> types(len);
    for (auto& t : types) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_types)));

    std::vector<int> word_len;
    for (int covered = 0; covered < len;) {
      const int wl = std::min(len - covered, rng.uniform_int(spec.word_length_range.first, spec.word_length_range.second));
      word_len.push_back(wl);
      covered += wl;
    }

    std::vector<int> pos_class(len);
    {
      int i = 0;
      for (int wi = 0; wi < static_cast<int>(word_len.size()); ++wi) {
        for (int k = 0; k < word_len[wi]; ++k, ++i) {
          u.phonemes.push_back(types[i] + Vocabulary::kFirstRegular);
          u.phoneme_word.push_back(wi);
          pos_class[i] = word_position_class(k, word_len[wi]);
        }
        std::vector<int> word_types(types.begin() + (i - word_len[wi]), types.begin() + i);
        std::vector<std::vector<int>> pieces;
        if (word_len[wi] <= 3) {
          pieces.push_back(word_types);
        } else {
          const int half = (word_len[wi] + 1) / 2;
          pieces.emplace_back(word_types.begin(), word_types.begin() + half);
          pieces.emplace_back(word_types.begin() + half, word_types.end());
        }
        for (const auto& piece : pieces) {
          u.bpe.push_back(Vocabulary::kFirstRegular + subword_bucket(piece, spec.seed, spec.bpe_vocab_size));
          u.bpe_word.push_back(wi);
        }
      }
    }

    std::vector<int> cls(len);
    std::vector<int> dur(len);
    int total_frames = 0;
    for (int i = 0; i < len; ++i) {
      Eigen::RowVectorXf score = position_scores.row(pos_class[i]);
      int table = 0;
      for (int o = -w; o <= w; ++o) {
        if (o == 0) continue;
        const int j = i + o;
        const int key = (j < 0 || j >= len) ? n_types : types[j];
        score += neighbor_scores[table++].row(key);
      }
      Eigen::Index best;
      score.maxCoeff(&best);
      cls[i] = static_cast<int>(best);
      dur[i] = std::max(1, static_cast<int>(std::lround(base_duration[types[i]] * duration_factor[cls[i]])));
      total_frames += dur[i];
    }

    u.features.resize(total_frames, f);
    int frame = 0;
    for (int i = 0; i < len; ++i) {
      // One noise draw per phoneme, repeated with the rest of its frame vector.
      Eigen::RowVectorXf mean = templates.row(types[i]) + modulation.row(cls[i]) + speaker_offsets.row(u.speaker_id);
      if (spec.noise_std > 0)
        for (int c = 0; c < f; ++c) mean(c) += static_cast<float>(rng.normal() * spec.noise_std);
      u.alignment.push_back({frame, frame + dur[i]});
      for (int k = 0; k < dur[i]; ++k, ++frame) {
        u.features.row(frame) = mean;
        if (spec.frame_noise_std > 0)
          for (int c = 0; c < f; ++c) u.features(frame, c) += static_cast<float>(rng.normal() * spec.frame_noise_std);
      }
    }
    classes_out.push_back(std::move(cls));
    corpus.utterances.push_back(std::move(u));
  }

  if (truth) {
    truth->phoneme_templates = templates;
    truth->prosody_modulation = modulation;
    truth->duration_factor = duration_factor;
    truth->base_duration = base_duration;
    truth->speaker_offsets = speaker_offsets;
    truth->prosody_class = std::move(classes_out);
  }
  return corpus;
}

}  // namespace prosody
