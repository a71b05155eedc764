#include "prosody/acoustic_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prosody {

void AcousticConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("acoustic config: ") + what);
  };
  require(feature_dim >= 1 && channels >= 1 && se_bottleneck >= 1 && attention_hidden >= 1 && d_out >= 1,
          "dimensions must be >= 1");
  require(front_kernel >= 1 && front_kernel % 2 == 1, "front_kernel must be odd");
  require(!dilations.empty(), "need at least one SE block");
  for (int d : dilations) require(d >= 1, "dilations must be >= 1");
  require(context_frames >= 0, "context_frames must be >= 0");
}

MelWindow extract_phoneme_window(const Utterance& u, int index, int context_frames) {
  if (index < 0 || index >= u.n_phonemes())
    throw std::out_of_range("phoneme index " + std::to_string(index) + " out of range for " + u.id);
  if (context_frames < 0) throw std::invalid_argument("context_frames must be >= 0");
  const auto& span = u.alignment[index];
  const int start = std::max(0, span.start - context_frames);
  const int end = std::min(u.n_frames(), span.end + context_frames);
  return {u.id, index, u.features.middleRows(start, end - start), start};
}

template <class T>
AcousticEncoder<T>::AcousticEncoder(const AcousticConfig& cfg, ParameterSet<T>& store, Rng& rng,
                                    const std::string& prefix)
    : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.channels;
  front_ = Conv1d<T>::make(store, prefix + "front", cfg.feature_dim, c, cfg.front_kernel, rng);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    const std::string name = prefix + "se" + std::to_string(i);
    SeBlock b;
    b.conv = Conv1d<T>::make(store, name + ".conv", c, c, 3, rng, cfg.dilations[i]);
    b.pointwise = Conv1d<T>::make(store, name + ".pointwise", c, c, 1, rng);
    b.squeeze = Conv1d<T>::make(store, name + ".squeeze", c, cfg.se_bottleneck, 1, rng);
    b.excite = Conv1d<T>::make(store, name + ".excite", cfg.se_bottleneck, c, 1, rng);
    blocks_.push_back(b);
  }
  const int agg = c * static_cast<int>(cfg.dilations.size());
  aggregate_ = Conv1d<T>::make(store, prefix + "aggregate", agg, agg, 1, rng);
  attn_hidden_ = Conv1d<T>::make(store, prefix + "pool.hidden", agg, cfg.attention_hidden, 1, rng);
  // no bias: softmax over time is invariant to a per-channel shift
  attn_out_ = Conv1d<T>::make(store, prefix + "pool.out", cfg.attention_hidden, agg, 1, rng, 1, false, false);
  head_ = Conv1d<T>::make(store, prefix + "head", 2 * agg, cfg.d_out, 1, rng);
}

template <class T>
Var<T> AcousticEncoder<T>::forward(Var<T> frames, const Segments& seg) const {
  if (frames.cols() != cfg_.feature_dim) throw std::invalid_argument("acoustic encoder: feature dimension mismatch");
  if (!frames.value().allFinite()) throw std::invalid_argument("acoustic encoder: non-finite input");
  const Segments none;
  const std::vector<int> owner = seg.row_owner();
  std::vector<int> group = owner;

  Var<T> x = relu(front_(frames, seg));
  std::vector<Var<T>> scales;
  for (const auto& b : blocks_) {
    Var<T> h = relu(b.pointwise(relu(b.conv(x, seg)), none));
    // squeeze-excitation: per-window channel gates from the time average
    Var<T> s = segment_mean(h, group, seg.count());
    s = sigmoid(b.excite(relu(b.squeeze(s, none)), none));
    x = add(x, mul(h, gather_rows(s, owner)));
    scales.push_back(x);
  }
  Var<T> agg = relu(aggregate_(concat_cols(scales), none));
  Var<T> logits = attn_out_(tanh(attn_hidden_(agg, none)), none);
  return head_(attentive_stats_pool(agg, logits, seg), none);
}

template <class T>
Matrix<T> pack_windows(const std::vector<MelWindow>& windows, Segments& seg) {
  seg = Segments();
  int rows = 0;
  for (const auto& w : windows) {
    if (w.frames.rows() < 1) throw std::invalid_argument("empty window for " + w.utterance_id);
    seg.push(static_cast<int>(w.frames.rows()));
    rows += static_cast<int>(w.frames.rows());
  }
  const int cols = windows.empty() ? 0 : static_cast<int>(windows[0].frames.cols());
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < windows.size(); ++i)
    out.middleRows(seg.begin(static_cast<int>(i)), windows[i].frames.rows()) = windows[i].frames.template cast<T>();
  return out;
}

Eigen::RowVectorXf encode_window(const AcousticEncoder<float>& encoder, const MelWindow& window) {
  Tape<float> tape(false);
  Segments seg;
  MatrixF packed = pack_windows<float>({window}, seg);
  return l2_normalize_rows(encoder.forward(tape.constant(std::move(packed)), seg)).value();
}

SpeakerEmbedder::SpeakerEmbedder(int feature_dim, int d_speaker, std::uint64_t seed) {
  Rng rng(seed);
  projection_ = random_normal<float>(feature_dim, d_speaker, 1.0 / std::sqrt(feature_dim), rng);
}

Eigen::RowVectorXf SpeakerEmbedder::embed(const std::vector<const Utterance*>& references) const {
  if (references.empty()) throw std::invalid_argument("speaker embedding needs at least one reference utterance");
  Eigen::RowVectorXf acc = Eigen::RowVectorXf::Zero(projection_.cols());
  for (const Utterance* u : references) {
    if (u->n_frames() == 0) throw std::invalid_argument("reference utterance has no frames: " + u->id);
    if (u->features.cols() != projection_.rows()) throw std::invalid_argument("reference feature dimension mismatch");
    acc += u->features.colwise().mean() * projection_;
  }
  return acc / static_cast<float>(references.size());
}

MatrixF speaker_table(const Corpus& corpus, SpeakerSource source, int d_speaker, std::uint64_t seed, int references) {
  const int n = corpus.n_speakers();
  if (source == SpeakerSource::planted) {
    if (corpus.planted_speaker_offsets.rows() < n)
      throw std::invalid_argument("planted speaker conditioning needs a synthetic corpus");
    if (corpus.planted_speaker_offsets.cols() != d_speaker)
      throw std::invalid_argument("planted speaker conditioning needs d_speaker == feature_dim");
    return corpus.planted_speaker_offsets.topRows(n);
  }
  SpeakerEmbedder embedder(corpus.feature_dim, d_speaker, seed);
  std::vector<std::vector<const Utterance*>> refs(n);
  for (const auto& u : corpus.utterances)
    if (static_cast<int>(refs[u.speaker_id].size()) < references) refs[u.speaker_id].push_back(&u);
  MatrixF table = MatrixF::Zero(n, d_speaker);
  for (int s = 0; s < n; ++s)
    if (!refs[s].empty()) table.row(s) = embedder.embed(refs[s]);
  return table;
}

template class AcousticEncoder<float>;
template class AcousticEncoder<double>;
template MatrixF pack_windows<float>(const std::vector<MelWindow>&, Segments&);
template MatrixD pack_windows<double>(const std::vector<MelWindow>&, Segments&);

}  // namespace prosody
