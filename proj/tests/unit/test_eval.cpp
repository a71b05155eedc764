#include <catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "prosody/eval.hpp"

#include <cmath>
#include <numeric>

#include <unistd.h>

using namespace prosody;
using prosody::testing::recall_oracle_rows;
using prosody::testing::tiny_corpus_spec;
using prosody::testing::tiny_train_config;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("prosody-eval-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig small_model_config(int feature_dim) {
  ModelConfig m;
  m.text = prosody::testing::tiny_encoder_config();
  m.text.d_model = 16;
  m.text.ffn_hidden = 16;
  m.text.d_out = 16;
  m.acoustic = prosody::testing::tiny_acoustic_config(feature_dim);
  m.acoustic.channels = 8;
  m.acoustic.d_out = 16;
  return m;
}

}  // namespace

TEST_CASE("recall_at_k equals a brute-force top-k oracle", "[eval]") {
  Rng rng(77);
  const std::vector<int> ks{1, 5, 10, 16};
  for (int trial = 0; trial < 1000; ++trial) {
    MatrixD s = random_normal<double>(16, 16, 1.0, rng);
    if (trial % 4 == 0) s = s.array().round();  // plenty of ties
    const auto t2a = recall_at_k(s, ks, Direction::text_to_audio);
    const auto a2t = recall_at_k(s, ks, Direction::audio_to_text);
    const auto mean = recall_at_k(s, ks, Direction::mean);
    const MatrixD st = s.transpose();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      REQUIRE(t2a[i] == recall_oracle_rows(s, ks[i]));
      REQUIRE(a2t[i] == recall_oracle_rows(st, ks[i]));
      REQUIRE(mean[i] == Catch::Approx(0.5 * (t2a[i] + a2t[i])));
      if (i > 0) REQUIRE(mean[i] >= mean[i - 1]);
    }
    REQUIRE(mean.back() == 1.0);
  }
}

TEST_CASE("recall_at_k closed cases", "[eval]") {
  CHECK(recall_at_k(MatrixD::Identity(8, 8), {1}, Direction::mean)[0] == 1.0);
  // All-equal scores: only query 0 wins its tie at k = 1.
  CHECK(recall_at_k(MatrixD::Ones(4, 4), {1, 2}, Direction::text_to_audio) == std::vector<double>{0.25, 0.5});
  MatrixD rev = MatrixD::Zero(3, 3);
  rev(0, 2) = rev(1, 0) = rev(2, 1) = 1;  // each text prefers a wrong audio
  CHECK(recall_at_k(rev, {1, 3}, Direction::mean) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("recall_at_k is invariant to a joint permutation", "[eval]") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixD s = random_normal<double>(10, 10, 1.0, rng);
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 9; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    MatrixD p(10, 10);
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) p(i, j) = s(perm[i], perm[j]);
    CHECK(recall_at_k(s, {1, 3, 7}, Direction::mean) == recall_at_k(p, {1, 3, 7}, Direction::mean));
  }
}

TEST_CASE("recall_at_k rejects bad input", "[eval]") {
  CHECK_THROWS_AS(recall_at_k(MatrixD::Zero(3, 4), {1}, Direction::mean), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_k(MatrixD::Zero(0, 0), {1}, Direction::mean), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_k(MatrixD::Zero(3, 3), {4}, Direction::mean), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_k(MatrixD::Zero(3, 3), {0}, Direction::mean), std::invalid_argument);
}

TEST_CASE("untrained encoders retrieve at chance", "[eval]") {
  SyntheticCorpusSpec spec;
  spec.n_utterances = 400;
  const Corpus corpus = generate_synthetic_corpus(spec);
  ProsodyModel<float> model(small_model_config(spec.feature_dim), corpus.phonemes.size(), corpus.bpe.size(), 3);
  EvalConfig cfg;  // batch 64, 50 batches
  const double p = 1.0 / cfg.batch_size;
  const double sigma = std::sqrt(p * (1 - p) / (cfg.batch_size * cfg.n_batches));
  for (const auto& r : {eval_rk_diff(model, corpus, cfg), eval_rk_sim(model, corpus, cfg)}) {
    INFO(to_string(r.family) << " R@1 = " << r.at(1));
    CHECK(std::abs(r.at(1) - p) <= 3 * sigma);
  }
}

TEST_CASE("evaluation is deterministic, read-only and reports its metadata", "[eval]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  ProsodyModel<float> model(tiny_train_config().model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  prosody::testing::randomize(model.params(), 8);
  Checkpoint before;
  capture_parameters(model, before);

  EvalConfig cfg{4, 7, {1, 2, 4}, 99};
  const auto a = eval_rk_diff(model, corpus, cfg);
  const auto b = eval_rk_diff(model, corpus, cfg);
  const auto s = eval_rk_sim(model, corpus, cfg);
  CHECK(a == b);
  CHECK(a.family == MetricFamily::diff);
  CHECK(s.family == MetricFamily::sim);
  CHECK(a.n_batches == 7);
  CHECK(a.batch_size == 4);
  CHECK(a.seed == 99);
  CHECK(a.recall.back() == 1.0);
  CHECK(s.recall.back() == 1.0);

  Checkpoint after;
  capture_parameters(model, after);
  for (std::size_t i = 0; i < before.tensors.size(); ++i) CHECK(before.tensors[i].value == after.tensors[i].value);

  nlohmann::json j = a;
  CHECK(j.at("metric_family") == "diff");
  CHECK(j.at("direction") == "mean");
  CHECK(j.at("recall").size() == 3);
}

TEST_CASE("identity hook gives perfect retrieval", "[eval]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  ProsodyModel<float> model(tiny_train_config().model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  EvalConfig cfg{4, 5, {1}, 1};
  auto hook = [](MatrixF& text, MatrixF& audio) {
    Rng rng(static_cast<std::uint64_t>(text.rows()));
    text = random_normal<float>(text.rows(), text.cols(), 1.0, rng);
    audio = text;
  };
  CHECK(eval_rk_diff(model, corpus, cfg, hook).at(1) == 1.0);
  CHECK(eval_rk_sim(model, corpus, cfg, hook).at(1) == 1.0);
}

TEST_CASE("evaluation preconditions", "[eval]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  ProsodyModel<float> model(tiny_train_config().model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  CHECK_THROWS_AS(eval_rk_diff(model, corpus, EvalConfig{64, 1, {1}, 0}), std::invalid_argument);
  CHECK_THROWS_AS(eval_rk_sim(model, corpus, EvalConfig{64, 1, {1}, 0}), std::invalid_argument);
  CHECK_THROWS(eval_rk_diff(model, corpus, EvalConfig{4, 1, {5}, 0}));
}

TEST_CASE("degenerate corpus carries no prosodic signal", "[eval]") {
  SyntheticCorpusSpec spec;
  spec.n_utterances = 300;
  spec.n_speakers = 1;
  spec.n_prosody_classes = 1;
  spec.noise_std = 0.0;
  const Corpus corpus = generate_synthetic_corpus(spec);
  ProsodyModel<float> model(small_model_config(spec.feature_dim), corpus.phonemes.size(), corpus.bpe.size(), 2);
  EvalConfig cfg;
  const auto r = eval_rk_sim(model, corpus, cfg);
  const double p = 1.0 / cfg.batch_size;
  CHECK(std::abs(r.at(1) - p) <= 3 * std::sqrt(p * (1 - p) / (cfg.batch_size * cfg.n_batches)));
}

TEST_CASE("ablation grid rows, errors and prefix reuse", "[eval]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  GridOptions opt;
  opt.train = tiny_train_config(4);
  opt.eval = EvalConfig{4, 3, {1, 2, 4}, 5};
  TempDir a("grid-a"), b("grid-b");

  opt.work_dir = a.path;
  const auto single = run_ablation_grid({parse_plan("2")}, corpus, opt);
  REQUIRE(single.size() == 1);
  CHECK(single[0].ok());
  CHECK(single[0].display == "2 stage");

  const std::vector<CurriculumPlan> plans{parse_plan("1+2"), parse_plan("1+2+3"), parse_plan("1")};
  opt.work_dir = b.path;
  const auto reused = run_ablation_grid(plans, corpus, opt);
  opt.reuse_prefixes = false;
  opt.work_dir = b.path / "fresh";
  const auto fresh = run_ablation_grid(plans, corpus, opt);
  REQUIRE(reused.size() == 3);
  CHECK(reused[1].reused_prefix == "1+2");
  CHECK(reused[2].reused_prefix == "1");
  for (std::size_t i = 0; i < plans.size(); ++i) {
    CHECK(reused[i].sim == fresh[i].sim);
    CHECK(reused[i].diff == fresh[i].diff);
  }

  // A plan that cannot run leaves an error row and the grid continues.
  GridOptions bad = opt;
  bad.train.stage3.batch_size = 500;
  bad.work_dir = b.path / "bad";
  const auto rows = run_ablation_grid({parse_plan("3"), parse_plan("2")}, corpus, bad);
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].ok());
  CHECK_FALSE(rows[0].sim.has_value());
  CHECK(rows[1].ok());

  const std::string table = render_table(rows);
  CHECK(table.rfind("Curriculum", 0) == 0);
  std::size_t pos = 0;
  for (const char* col : {"R@1-sim", "R@5-sim", "R@10-sim", "R@1-diff", "R@5-diff", "R@10-diff"}) {
    const auto next = table.find(col, pos);
    CHECK(next != std::string::npos);
    pos = next;
  }
  CHECK(table.find("error:") != std::string::npos);
}

TEST_CASE("reference grid order", "[eval]") {
  std::vector<std::string> labels;
  for (const auto& p : reference_grid()) labels.push_back(p.label());
  CHECK(labels == std::vector<std::string>{"1+3", "1+2", "2+3", "3", "2", "2:clip", "2:noadaln", "1+2+3"});
}
