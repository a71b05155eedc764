#include "prosody/model.hpp"

#include <stdexcept>

namespace prosody {

void ModelConfig::validate() const {
  text.validate();
  acoustic.validate();
  if (text.d_out != acoustic.d_out) throw std::invalid_argument("model config: text and acoustic d_out differ");
  if (speaker_references < 1) throw std::invalid_argument("model config: speaker_references must be >= 1");
}

template <class T>
ProsodyModel<T>::ProsodyModel(const ModelConfig& cfg, int phoneme_vocab, int bpe_vocab, std::uint64_t seed)
    : cfg_(cfg), phoneme_vocab_(phoneme_vocab), bpe_vocab_(bpe_vocab) {
  cfg.validate();
  Rng rng(seed);
  text_ = std::make_unique<TextEncoder<T>>(cfg.text, phoneme_vocab, bpe_vocab, params_, rng);
  acoustic_ = std::make_unique<AcousticEncoder<T>>(cfg.acoustic, params_, rng);
  logit_scale_ = &params_.add("siglip.t", Matrix<T>::Constant(1, 1, static_cast<T>(kInitLogitScale)));
  logit_bias_ = &params_.add("siglip.b", Matrix<T>::Constant(1, 1, static_cast<T>(kInitLogitBias)));
}

template <class T>
MatrixF ProsodyModel<T>::speaker_table(const Corpus& corpus) const {
  if (!cfg_.text.adaln_enabled) return {};
  return prosody::speaker_table(corpus, cfg_.speaker_source, cfg_.text.d_speaker, cfg_.speaker_seed,
                                cfg_.speaker_references);
}

template <class T>
Matrix<T> gather_speakers(const Corpus& corpus, const std::vector<int>& utterances, const MatrixF& table,
                          int d_speaker) {
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(utterances.size()), d_speaker);
  if (table.size() == 0) return out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = table.row(corpus.utterances[utterances[i]].speaker_id).template cast<T>();
  return out;
}

template <class T>
PairEmbeddings<T> embed_pairs(Tape<T>& tape, const ProsodyModel<T>& model, const Corpus& corpus,
                              const ContrastiveBatch& batch, const MatrixF& speakers, const ForwardOptions& opts) {
  std::vector<const Utterance*> utts;
  std::vector<int> ids;
  std::vector<MelWindow> windows;
  for (const auto& it : batch.items) {
    utts.push_back(&corpus.utterances[it.utterance]);
    ids.push_back(it.utterance);
    windows.push_back(extract_phoneme_window(corpus.utterances[it.utterance], it.position,
                                             model.config().acoustic.context_frames));
  }
  TextBatch tb = TextBatch::pack(utts);
  Matrix<T> spk = gather_speakers<T>(corpus, ids, speakers, model.config().text.d_speaker);
  Var<T> text_rows = model.text().forward(tape, tb, spk, opts);
  std::vector<int> picked;
  for (std::size_t i = 0; i < batch.items.size(); ++i)
    picked.push_back(tb.phoneme_seg.begin(static_cast<int>(i)) + batch.items[i].position);

  Segments seg;
  Matrix<T> frames = pack_windows<T>(windows, seg);
  Var<T> audio = model.acoustic().forward(tape.constant(std::move(frames)), seg);
  return {gather_rows(text_rows, picked), audio};
}

template class ProsodyModel<float>;
template class ProsodyModel<double>;
template PairEmbeddings<float> embed_pairs(Tape<float>&, const ProsodyModel<float>&, const Corpus&,
                                           const ContrastiveBatch&, const MatrixF&, const ForwardOptions&);
template PairEmbeddings<double> embed_pairs(Tape<double>&, const ProsodyModel<double>&, const Corpus&,
                                            const ContrastiveBatch&, const MatrixF&, const ForwardOptions&);
template MatrixF gather_speakers<float>(const Corpus&, const std::vector<int>&, const MatrixF&, int);
template MatrixD gather_speakers<double>(const Corpus&, const std::vector<int>&, const MatrixF&, int);

}  // namespace prosody
