#include <catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace prosody;
using namespace prosody::testing;

namespace {

Utterance span_utterance(int frames, std::vector<FrameSpan> spans) {
  Utterance u;
  u.id = "u";
  u.features = MatrixF::Zero(frames, 2);
  for (int f = 0; f < frames; ++f) u.features(f, 0) = static_cast<float>(f);
  u.alignment = std::move(spans);
  u.phonemes.assign(u.alignment.size(), 3);
  return u;
}

}  // namespace

TEST_CASE("phoneme windows follow the context rule", "[acoustic]") {
  auto u = span_utterance(100, {{0, 10}, {10, 14}, {14, 100}});
  auto w0 = extract_phoneme_window(u, 1, 0);
  CHECK(w0.start_frame == 10);
  CHECK(w0.frames.rows() == 4);
  auto w = extract_phoneme_window(u, 1, 5);
  CHECK(w.start_frame == 5);
  CHECK(w.frames.rows() == 14);  // frames [5, 19)
  CHECK(w.frames(0, 0) == 5.0f);
  CHECK(w.frames(13, 0) == 18.0f);
  auto first = extract_phoneme_window(u, 0, 50);
  CHECK(first.start_frame == 0);
  CHECK(first.frames.rows() == 60);
  CHECK_THROWS_AS(extract_phoneme_window(u, 3, 0), std::out_of_range);
}

TEST_CASE("acoustic embeddings are unit norm and deterministic", "[acoustic]") {
  auto corpus = generate_synthetic_corpus(tiny_corpus_spec());
  ParameterSet<float> ps;
  Rng rng(2);
  AcousticEncoder<float> enc(tiny_acoustic_config(), ps, rng);
  auto w = extract_phoneme_window(corpus.utterances[0], 1, 2);
  auto e1 = encode_window(enc, w);
  auto e2 = encode_window(enc, w);
  CHECK(e1.size() == 4);
  CHECK(e1.norm() == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(e1 == e2);

  // leading copies of the first frame: still a finite unit vector
  MelWindow padded = w;
  padded.frames.resize(w.frames.rows() + 3, w.frames.cols());
  padded.frames.topRows(3) = w.frames.row(0).replicate(3, 1);
  padded.frames.bottomRows(w.frames.rows()) = w.frames;
  auto e3 = encode_window(enc, padded);
  CHECK(e3.allFinite());
  CHECK(e3.norm() == Catch::Approx(1.0).epsilon(1e-6));

  MelWindow bad = w;
  bad.frames(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(encode_window(enc, bad));
}

TEST_CASE("attentive pooling reduces to mean and std pooling", "[acoustic][pooling]") {
  Rng rng(7);
  MatrixD h = random_normal<double>(9, 3, 1.0, rng);
  Segments seg({4, 5});
  Tape<double> t(false);
  auto pooled = attentive_stats_pool(t.constant(h), t.constant(MatrixD::Constant(9, 3, 0.7)), seg).value();
  for (int s = 0; s < 2; ++s) {
    auto block = h.middleRows(seg.begin(s), seg.length(s));
    Eigen::RowVectorXd mean = block.colwise().mean();
    Eigen::RowVectorXd var = (block.rowwise() - mean).array().square().colwise().mean();
    Eigen::RowVectorXd sd = ((var.array() + 1e-6).sqrt() - std::sqrt(1e-6)).matrix();
    CHECK(pooled.row(s).head(3).isApprox(mean, 1e-12));
    CHECK(pooled.row(s).tail(3).isApprox(sd, 1e-9));
  }
  auto constant = attentive_stats_pool(t.constant(MatrixD::Constant(4, 2, 1.5)), t.constant(MatrixD::Zero(4, 2)),
                                       Segments({4}))
                      .value();
  CHECK(constant.rightCols(2).isZero(0.0));
}

TEST_CASE("acoustic encoder gradients match finite differences", "[acoustic][gradcheck]") {
  auto corpus = generate_synthetic_corpus(tiny_corpus_spec());
  ParameterSet<double> ps;
  Rng rng(3);
  AcousticEncoder<double> enc(tiny_acoustic_config(), ps, rng);
  randomize(ps, 9, 0.5);
  std::vector<MelWindow> windows{extract_phoneme_window(corpus.utterances[0], 0, 1),
                                 extract_phoneme_window(corpus.utterances[1], 2, 1)};
  Segments seg;
  MatrixD frames = pack_windows<double>(windows, seg);
  auto res = check_gradients(ps, [&](Tape<double>& t) { return probe(enc.forward(t.constant(frames), seg)); });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("speaker stand-in embedder", "[acoustic][speaker]") {
  auto corpus = generate_synthetic_corpus(tiny_corpus_spec());
  const auto& u = corpus.utterances[0];
  SpeakerEmbedder identity(MatrixF::Identity(3, 3));
  CHECK(identity.embed({&u}).isApprox(u.features.colwise().mean(), 1e-6f));
  CHECK(identity.embed({&u, &u}).isApprox(identity.embed({&u}), 1e-6f));
  CHECK_THROWS(identity.embed({}));
}

TEST_CASE("stand-in speaker embeddings separate planted speakers", "[acoustic][speaker]") {
  SyntheticCorpusSpec spec;
  spec.noise_std = 0;
  spec.n_utterances = 400;
  auto corpus = generate_synthetic_corpus(spec);
  auto table = speaker_table(corpus, SpeakerSource::stand_in, 64, 1);
  const auto& planted = corpus.planted_speaker_offsets;
  for (int a = 0; a < table.rows(); ++a)
    for (int b = a + 1; b < table.rows(); ++b)
      if (planted.row(a) != planted.row(b)) CHECK((table.row(a) - table.row(b)).norm() > 1e-3f);
  auto direct = speaker_table(corpus, SpeakerSource::planted, spec.feature_dim, 1);
  CHECK(direct == planted);
  CHECK_THROWS(speaker_table(corpus, SpeakerSource::planted, 64, 1));
}
