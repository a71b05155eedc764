#include <catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "prosody/curriculum.hpp"

#include <cmath>
#include <algorithm>
#include <fstream>
#include <limits>

#include <unistd.h>

using namespace prosody;
using prosody::testing::tiny_corpus_spec;
using prosody::testing::tiny_train_config;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("prosody-curriculum-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

bool same_tensors(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].name != b.tensors[i].name || a.tensors[i].value != b.tensors[i].value) return false;
  return true;
}

}  // namespace

TEST_CASE("plan parsing", "[curriculum]") {
  for (const auto& p : valid_plans()) CHECK(parse_plan(p).label() == p);
  CHECK(parse_plan("1+2+3").stages == std::vector<int>{1, 2, 3});
  CHECK(parse_plan("1+3").display() == "1+3 stage");
  CHECK(parse_plan("2:clip").display() == "2 stage (CLIP, w/ AdaLN)");
  CHECK(parse_plan("2:noadaln").display() == "2 stage (SigLIP, w/o AdaLN)");
  CHECK(parse_plan("1+2+3").prefix(2).label() == "1+2");
  CHECK(parse_plan("2:clip").prefix(1).label() == "2:clip");

  for (const char* bad : {"", "4", "2+1", "1+1", "1+", "+2", "2:foo", "2:clip:clip", "1:clip", "1,2"}) {
    INFO(bad);
    CHECK_THROWS_AS(parse_plan(bad), PlanError);
  }
  try {
    parse_plan("1+4");
  } catch (const PlanError& e) {
    CHECK(std::string(e.what()).find("1+2+3") != std::string::npos);
  }
}

TEST_CASE("plan variants change only the intended config fields", "[curriculum]") {
  const TrainConfig base = tiny_train_config();
  TrainConfig c = apply_plan(base, parse_plan("2:clip"));
  CHECK(c.stage2.loss == ContrastiveLoss::clip);
  CHECK(c.model == base.model);
  TrainConfig n = apply_plan(base, parse_plan("2:noadaln"));
  CHECK_FALSE(n.model.text.adaln_enabled);
  CHECK(n.stage2 == base.stage2);
  CHECK(apply_plan(base, parse_plan("1+2+3")) == base);
}

TEST_CASE("a full plan writes checkpoints and one log record per step", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  const TrainConfig cfg = tiny_train_config();
  TempDir dir("full");
  PlanResult r = run_plan(parse_plan("1+2+3"), corpus, cfg, dir.path);

  REQUIRE(r.checkpoints.size() == 3);
  for (const auto& p : r.checkpoints) CHECK(fs::exists(p));
  CHECK(r.final.completed_stages == std::vector<int>{1, 2, 3});
  CHECK(r.final.plan_label == "1+2+3");
  CHECK(r.final.global_step == cfg.stage1.steps + cfg.stage2.steps + cfg.stage3.steps);
  CHECK(r.final.corpus_hash == corpus_fingerprint(corpus));
  REQUIRE(r.final.history.size() == 3);
  for (const auto& h : r.final.history) CHECK(std::isfinite(h.final_loss));

  const auto log = read_log(r.log_path);
  REQUIRE(log.size() == static_cast<std::size_t>(r.final.global_step));
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].at("step").get<long>() == static_cast<long>(i + 1));
    for (const char* key : {"stage", "loss", "t", "b", "wall_ms", "batch_seed"}) CHECK(log[i].contains(key));
  }
  CHECK(log.front().contains("loss_phoneme"));
  CHECK(log.front().contains("loss_bpe"));
  CHECK(log.back().contains("phoneme"));

  // Stage-1 heads are not part of the saved model.
  for (const auto& t : r.final.tensors) CHECK(t.name.rfind("mlm.", 0) == std::string::npos);
}

TEST_CASE("training is deterministic in the seed", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  TempDir a("det-a"), b("det-b"), c("det-c");
  auto ra = run_plan(parse_plan("1+2"), corpus, tiny_train_config(5), a.path);
  auto rb = run_plan(parse_plan("1+2"), corpus, tiny_train_config(5), b.path);
  auto rc = run_plan(parse_plan("1+2"), corpus, tiny_train_config(6), c.path);
  CHECK(same_tensors(ra.final, rb.final));
  CHECK_FALSE(same_tensors(ra.final, rc.final));
}

TEST_CASE("resuming from a stage checkpoint equals the uninterrupted run", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(4));
  const TrainConfig cfg = tiny_train_config(2);
  TempDir whole("whole"), part("part");
  auto direct = run_plan(parse_plan("1+2+3"), corpus, cfg, whole.path);

  auto first = run_plan(parse_plan("1"), corpus, cfg, part.path);
  const Checkpoint loaded = load_checkpoint(first.checkpoints.front());
  auto resumed = run_plan(parse_plan("1+2+3"), corpus, cfg, part.path, &loaded);

  CHECK(same_tensors(direct.final, resumed.final));
  CHECK(resumed.final.global_step == direct.final.global_step);
  CHECK(read_log(resumed.log_path).size() == read_log(direct.log_path).size());

  // The intermediate checkpoint of the full run matches the shorter plan too.
  CHECK(same_tensors(load_checkpoint(direct.checkpoints.front()), loaded));
}

TEST_CASE("checkpoints round-trip bit-exactly", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  TempDir dir("rt");
  auto r = run_plan(parse_plan("2"), corpus, tiny_train_config(), dir.path);
  const Checkpoint loaded = load_checkpoint(r.checkpoints.back());
  CHECK(same_tensors(r.final, loaded));
  CHECK(loaded.config == r.final.config);
  CHECK(loaded.history.size() == 1);
  CHECK(loaded.history[0].final_loss == r.final.history[0].final_loss);

  auto model = restore_model(loaded);
  Checkpoint again;
  capture_parameters(*model, again);
  CHECK(same_tensors(again, loaded));
}

TEST_CASE("resume rejects incompatible checkpoints", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  const TrainConfig cfg = tiny_train_config();
  TempDir dir("mismatch");
  auto r = run_plan(parse_plan("2"), corpus, cfg, dir.path / "two");
  const Checkpoint ck = load_checkpoint(r.checkpoints.back());

  // Stage list is not a prefix.
  CHECK_THROWS_AS(run_plan(parse_plan("1+2"), corpus, cfg, dir.path / "x", &ck), ResumeMismatch);
  // A finished stage trained under a different spec.
  TrainConfig other = cfg;
  other.stage2.learning_rate *= 2;
  CHECK_THROWS_AS(run_plan(parse_plan("2+3"), corpus, other, dir.path / "y", &ck), ResumeMismatch);
  TrainConfig wider = cfg;
  wider.model.text.d_model = 16;
  CHECK_THROWS_AS(run_plan(parse_plan("2+3"), corpus, wider, dir.path / "y2", &ck), ResumeMismatch);
  // A stage that has not run yet may change.
  TrainConfig later = cfg;
  later.stage3.steps += 2;
  CHECK(run_plan(parse_plan("2+3"), corpus, later, dir.path / "ok", &ck).final.global_step ==
        cfg.stage2.steps + later.stage3.steps);
  // Different corpus.
  const Corpus moved = generate_synthetic_corpus(tiny_corpus_spec(9));
  CHECK_THROWS_AS(run_plan(parse_plan("2+3"), moved, cfg, dir.path / "z", &ck), ResumeMismatch);
  // Variant flags are part of the config snapshot.
  CHECK_THROWS_AS(run_plan(parse_plan("2:clip"), corpus, cfg, dir.path / "w", &ck), ResumeMismatch);
}

TEST_CASE("stage 1 brings both MLM losses below the uniform baseline", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  TrainConfig cfg = tiny_train_config();
  cfg.model.text.dropout = 0.0;
  ProsodyModel<float> model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  StageSpec spec{1, 300, 8, 1e-2};
  spec.mask_probability = 0.3;
  long step = 0;
  std::vector<double> ph, bpe;
  StageRun run{corpus, [&](const nlohmann::json& r) {
                 ph.push_back(r.at("loss_phoneme").get<double>());
                 bpe.push_back(r.at("loss_bpe").get<double>());
               },
               &step};
  run_stage1(model, spec, 11, run);
  auto tail = [](const std::vector<double>& v) {
    double s = 0;
    for (std::size_t i = v.size() - 50; i < v.size(); ++i) s += v[i];
    return s / 50;
  };
  CHECK(tail(ph) < std::log(static_cast<double>(corpus.phonemes.size())));
  CHECK(tail(bpe) < std::log(static_cast<double>(corpus.bpe.size())));
  CHECK(step == 300);
}

TEST_CASE("stage 1 trains only the requested stream", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  const TrainConfig cfg = tiny_train_config();
  ProsodyModel<float> model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  std::vector<MatrixF> before;
  for (auto* p : model.params().all()) before.push_back(p->value);
  long step = 0;
  run_stage1(model, cfg.stage1, 3, StageRun{corpus, {}, &step}, {Stream::phoneme});
  const auto all = model.params().all();
  bool phoneme_moved = false;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool moved = all[i]->value != before[i];
    if (all[i]->name.rfind("text.phoneme.", 0) == 0)
      phoneme_moved |= moved;
    else {
      INFO(all[i]->name);
      CHECK_FALSE(moved);
    }
  }
  CHECK(phoneme_moved);
}

TEST_CASE("contrastive stages reduce the loss and respect the loss variant", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  TrainConfig cfg = tiny_train_config();
  ProsodyModel<float> model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  std::vector<double> losses;
  long step = 0;
  StageRun run{corpus, [&](const nlohmann::json& r) { losses.push_back(r.at("loss").get<double>()); }, &step};
  run_stage2(model, {2, 60, 8, 1e-2}, 4, run);
  CHECK(losses.back() < losses.front());

  ProsodyModel<float> clip_model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  const float b0 = clip_model.logit_bias().value(0, 0);
  StageSpec clip_spec{2, 5, 8, 1e-2};
  clip_spec.loss = ContrastiveLoss::clip;
  run_stage2(clip_model, clip_spec, 4, StageRun{corpus, {}, &step});
  CHECK(clip_model.logit_bias().value(0, 0) == b0);
}

TEST_CASE("stage 3 batches share one phoneme type", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  const TrainConfig cfg = tiny_train_config();
  ProsodyModel<float> model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  PhonemeIndex index(corpus);
  const auto eligible = index.eligible(4);
  long step = 0;
  std::vector<int> seen;
  run_stage3(model, {3, 20, 4, 1e-3}, 2,
             StageRun{corpus, [&](const nlohmann::json& r) { seen.push_back(r.at("phoneme").get<int>()); }, &step});
  REQUIRE(seen.size() == 20);
  for (int p : seen) CHECK(std::find(eligible.begin(), eligible.end(), p) != eligible.end());

  CHECK_THROWS_AS(run_stage3(model, {3, 1, 10000, 1e-3}, 2, StageRun{corpus, {}, &step}), std::invalid_argument);
}

TEST_CASE("a non-finite loss aborts with the step number", "[curriculum]") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec(3));
  const TrainConfig cfg = tiny_train_config();
  ProsodyModel<float> model(cfg.model, corpus.phonemes.size(), corpus.bpe.size(), 1);
  model.logit_scale().value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  long step = 7;
  try {
    run_stage2(model, {2, 3, 4, 1e-3}, 1, StageRun{corpus, {}, &step});
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("step 7") != std::string::npos);
  }
}

TEST_CASE("train config json round-trips and validates weight decay", "[curriculum]") {
  TrainConfig cfg = tiny_train_config();
  cfg.stage2.weight_decay = 0.0;
  cfg.stage3.weight_decay = 0.75;
  cfg.logit_lr_scale = 12.0;
  const nlohmann::json j = cfg;
  const auto back = j.get<TrainConfig>();
  CHECK(back.stage3.weight_decay == 0.75);
  CHECK(back.stage2.weight_decay == 0.0);
  CHECK(back.logit_lr_scale == 12.0);

  StageSpec bad = cfg.stage3;
  bad.weight_decay = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
