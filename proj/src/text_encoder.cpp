#include "prosody/text_encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace prosody {

void EncoderConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("encoder config: ") + what);
  };
  require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "d_model must be a positive multiple of n_heads");
  require(n_blocks_per_stream >= 1 && n_shared_blocks >= 1, "block counts must be >= 1");
  require(ffn_kernel_size >= 1 && ffn_kernel_size % 2 == 1, "ffn_kernel_size must be odd");
  require(projection_kernel >= 1 && projection_kernel % 2 == 1, "projection_kernel must be odd");
  require(ffn_hidden >= 1 && rel_pos_clip >= 1 && d_speaker >= 1 && d_out >= 1 && modulation_hidden >= 1,
          "dimensions must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

TextBatch TextBatch::pack(const std::vector<const Utterance*>& utterances) {
  TextBatch b;
  for (const Utterance* u : utterances) {
    if (u->phonemes.empty() || u->bpe.empty()) throw std::invalid_argument("text batch: empty token sequence " + u->id);
    b.phoneme_seg.push(u->n_phonemes());
    b.bpe_seg.push(static_cast<int>(u->bpe.size()));
    b.phoneme_ids.insert(b.phoneme_ids.end(), u->phonemes.begin(), u->phonemes.end());
    b.bpe_ids.insert(b.bpe_ids.end(), u->bpe.begin(), u->bpe.end());
    for (int w : u->phoneme_word) b.phoneme_word.push_back(b.n_words + w);
    for (int w : u->bpe_word) b.bpe_word.push_back(b.n_words + w);
    b.n_words += u->n_words();
  }
  return b;
}

template <class T>
Var<T> word_pool(Var<T> hidden, const std::vector<int>& bpe_word, int n_words) {
  return segment_mean(hidden, bpe_word, n_words);
}

template <class T>
Var<T> word_to_phoneme_expand(Var<T> pooled, const std::vector<int>& phoneme_word) {
  return gather_rows(pooled, phoneme_word);
}

// --- block -----------------------------------------------------------------

template <class T>
EncoderBlock<T>::EncoderBlock(ParameterSet<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int d = cfg.d_model;
  qkv_ = Conv1d<T>::make(store, name + ".attn.qkv", d, 3 * d, 1, rng);
  rel_keys_ = &store.add(name + ".attn.rel_keys",
                         random_normal<T>(2 * cfg.rel_pos_clip + 1, d, 1.0 / std::sqrt(d / cfg.n_heads), rng));
  out_ = Conv1d<T>::make(store, name + ".attn.out", d, d, 1, rng);
  ffn1_ = Conv1d<T>::make(store, name + ".ffn.conv1", d, cfg.ffn_hidden, cfg.ffn_kernel_size, rng);
  ffn2_ = Conv1d<T>::make(store, name + ".ffn.conv2", cfg.ffn_hidden, d, cfg.ffn_kernel_size, rng);
  if (cfg.adaln_enabled) {
    mod_hidden_ = Conv1d<T>::make(store, name + ".mod.hidden", cfg.d_speaker, cfg.modulation_hidden, 1, rng);
    mod_out_ = Conv1d<T>::make(store, name + ".mod.out", cfg.modulation_hidden, 6 * d, 1, rng, 1, true);
  } else {
    norm1_ = AffineNorm<T>::make(store, name + ".norm1", d);
    norm2_ = AffineNorm<T>::make(store, name + ".norm2", d);
  }
}

template <class T>
Var<T> EncoderBlock<T>::operator()(Var<T> x, const Segments& seg, Var<T> speaker_items,
                                   const std::vector<int>& owner, const ForwardOptions& opts) const {
  const int d = cfg_.d_model;
  const bool drop = opts.train && opts.rng && cfg_.dropout > 0;
  auto regularize = [&](Var<T> v) { return drop ? dropout(v, cfg_.dropout, *opts.rng) : v; };

  auto attention = [&](Var<T> h) {
    Tape<T>& t = *h.tape;
    Var<T> qkv = qkv_(h, seg);
    Var<T> a = relative_attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, d), slice_cols(qkv, 2 * d, d),
                                  t.parameter(*rel_keys_), seg, cfg_.n_heads, cfg_.rel_pos_clip);
    return regularize(out_(a, seg));
  };
  auto feed_forward = [&](Var<T> h) { return regularize(ffn2_(gelu(ffn1_(h, seg)), seg)); };

  if (!cfg_.adaln_enabled) {
    x = add(x, attention(norm1_(x)));
    return add(x, feed_forward(norm2_(x)));
  }

  // [segments x 6d] -> one modulation row per packed row
  Var<T> mod = mod_out_(gelu(mod_hidden_(speaker_items, Segments())), Segments());
  mod = gather_rows(mod, owner);
  auto chunk = [&](int i) { return slice_cols(mod, i * d, d); };
  auto modulate = [&](Var<T> v, Var<T> gamma, Var<T> beta) {
    return add(mul(layer_norm(v), add_scalar(gamma, T(1))), beta);
  };
  x = add(x, mul(chunk(2), attention(modulate(x, chunk(0), chunk(1)))));
  return add(x, mul(chunk(5), feed_forward(modulate(x, chunk(3), chunk(4)))));
}

// --- encoder ---------------------------------------------------------------

template <class T>
TextEncoder<T>::TextEncoder(const EncoderConfig& cfg, int phoneme_vocab, int bpe_vocab, ParameterSet<T>& store,
                            Rng& rng, const std::string& prefix)
    : cfg_(cfg), phoneme_vocab_(phoneme_vocab), bpe_vocab_(bpe_vocab) {
  cfg.validate();
  if (phoneme_vocab < 1 || bpe_vocab < 1) throw std::invalid_argument("text encoder: empty vocabulary");
  phoneme_embed_ = &store.add(prefix + "phoneme.embed", random_normal<T>(phoneme_vocab, cfg.d_model, 1.0, rng));
  for (int i = 0; i < cfg.n_blocks_per_stream; ++i)
    phoneme_blocks_.emplace_back(store, prefix + "phoneme.block" + std::to_string(i), cfg, rng);
  bpe_embed_ = &store.add(prefix + "bpe.embed", random_normal<T>(bpe_vocab, cfg.d_model, 1.0, rng));
  for (int i = 0; i < cfg.n_blocks_per_stream; ++i)
    bpe_blocks_.emplace_back(store, prefix + "bpe.block" + std::to_string(i), cfg, rng);
  for (int i = 0; i < cfg.n_shared_blocks; ++i)
    shared_blocks_.emplace_back(store, prefix + "shared.block" + std::to_string(i), cfg, rng);
  final_norm_ = AffineNorm<T>::make(store, prefix + "final_norm", cfg.d_model);
  projection_ = Conv1d<T>::make(store, prefix + "projection", cfg.d_model, cfg.d_out, cfg.projection_kernel, rng);
}

template <class T>
Var<T> TextEncoder<T>::speaker_input(Tape<T>& tape, const Matrix<T>& speakers, int count) const {
  if (!cfg_.adaln_enabled) return tape.constant(Matrix<T>());
  if (speakers.rows() != count || speakers.cols() != cfg_.d_speaker)
    throw std::invalid_argument("text encoder: speaker matrix must be [batch x d_speaker]");
  if (!speakers.allFinite()) throw std::invalid_argument("text encoder: non-finite speaker embedding");
  return tape.constant(speakers);
}

template <class T>
Var<T> TextEncoder<T>::run_blocks(const std::vector<EncoderBlock<T>>& blocks, Var<T> x, const Segments& seg,
                                  Var<T> spk, const ForwardOptions& opts) const {
  const std::vector<int> owner = cfg_.adaln_enabled ? seg.row_owner() : std::vector<int>{};
  for (const auto& b : blocks) x = b(x, seg, spk, owner, opts);
  return x;
}

template <class T>
Var<T> TextEncoder<T>::encode_stream(Tape<T>& tape, Stream stream, const std::vector<int>& ids, const Segments& seg,
                                     const Matrix<T>& speakers, const ForwardOptions& opts) const {
  if (ids.empty() || static_cast<int>(ids.size()) != seg.total())
    throw std::invalid_argument("encode_stream: token ids do not match the segment layout");
  for (int i = 0; i < seg.count(); ++i)
    if (seg.length(i) == 0) throw std::invalid_argument("encode_stream: empty sequence");
  const int vocab = vocab_size(stream);
  for (int id : ids)
    if (id < 0 || id >= vocab) throw std::out_of_range("encode_stream: token id " + std::to_string(id) + " out of vocabulary");
  Parameter<T>& table = stream == Stream::phoneme ? *phoneme_embed_ : *bpe_embed_;
  Var<T> x = gather_rows(tape.parameter(table), ids);
  const auto& blocks = stream == Stream::phoneme ? phoneme_blocks_ : bpe_blocks_;
  return run_blocks(blocks, x, seg, speaker_input(tape, speakers, seg.count()), opts);
}

template <class T>
Var<T> TextEncoder<T>::forward(Tape<T>& tape, const TextBatch& batch, const Matrix<T>& speakers,
                               const ForwardOptions& opts) const {
  Var<T> ph = encode_stream(tape, Stream::phoneme, batch.phoneme_ids, batch.phoneme_seg, speakers, opts);
  Var<T> bp = encode_stream(tape, Stream::bpe, batch.bpe_ids, batch.bpe_seg, speakers, opts);
  Var<T> aligned = word_to_phoneme_expand(word_pool(bp, batch.bpe_word, batch.n_words), batch.phoneme_word);
  Var<T> x = run_blocks(shared_blocks_, add(ph, aligned), batch.phoneme_seg,
                        speaker_input(tape, speakers, batch.size()), opts);
  return projection_(final_norm_(x), batch.phoneme_seg);
}

ProsodyEmbeddingSequence embed_utterance(const TextEncoder<float>& encoder, const Utterance& u,
                                         const Eigen::RowVectorXf& speaker) {
  Tape<float> tape(false);
  MatrixF spk = speaker;
  auto out = encoder.forward(tape, TextBatch::pack({&u}), spk);
  return {u.id, out.value()};
}

template Var<float> word_pool(Var<float>, const std::vector<int>&, int);
template Var<double> word_pool(Var<double>, const std::vector<int>&, int);
template Var<float> word_to_phoneme_expand(Var<float>, const std::vector<int>&);
template Var<double> word_to_phoneme_expand(Var<double>, const std::vector<int>&);
template class EncoderBlock<float>;
template class EncoderBlock<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace prosody
