#include "prosody/curriculum.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace prosody {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

const char* stream_name(Stream s) { return s == Stream::phoneme ? "phoneme" : "bpe"; }

void require_finite(double loss, int stage, long step) {
  if (!std::isfinite(loss))
    throw TrainingDiverged("stage " + std::to_string(stage) + " diverged at step " + std::to_string(step) +
                           ": non-finite loss");
}

/// Running summary of a stage's losses.
struct LossTrace {
  std::vector<double> values;
  StageRecord finish(int stage, std::uint64_t seed, Clock::time_point t0) const {
    StageRecord r;
    r.stage = stage;
    r.steps = static_cast<long>(values.size());
    r.seed = seed;
    r.final_loss = values.empty() ? 0.0 : values.back();
    const std::size_t tail = std::max<std::size_t>(1, values.size() / 10);
    if (!values.empty())
      r.tail_loss = std::accumulate(values.end() - static_cast<long>(tail), values.end(), 0.0) / static_cast<double>(tail);
    r.wall_seconds = ms_since(t0) / 1000.0;
    return r;
  }
};

json step_record(long step, int stage, double loss, ProsodyModel<float>& model, double wall_ms) {
  return {{"step", step},
          {"stage", stage},
          {"loss", loss},
          {"t", model.logit_scale().value(0, 0)},
          {"b", model.logit_bias().value(0, 0)},
          {"wall_ms", wall_ms}};
}

}  // namespace

// --- plans -----------------------------------------------------------------

std::string CurriculumPlan::label() const {
  std::string s;
  for (std::size_t i = 0; i < stages.size(); ++i) s += (i ? "+" : "") + std::to_string(stages[i]);
  if (clip) s += ":clip";
  if (no_adaln) s += ":noadaln";
  return s;
}

std::string CurriculumPlan::display() const {
  std::string s;
  for (std::size_t i = 0; i < stages.size(); ++i) s += (i ? "+" : "") + std::to_string(stages[i]);
  s += " stage";
  if (clip || no_adaln)
    s += std::string(" (") + (clip ? "CLIP" : "SigLIP") + (no_adaln ? ", w/o AdaLN)" : ", w/ AdaLN)");
  return s;
}

CurriculumPlan CurriculumPlan::prefix(std::size_t n) const {
  CurriculumPlan p = *this;
  p.stages.resize(std::min(n, stages.size()));
  return p;
}

const std::vector<std::string>& valid_plans() {
  static const std::vector<std::string> plans{"1", "2", "3", "1+2", "1+3", "2+3", "1+2+3", "2:clip", "2:noadaln"};
  return plans;
}

CurriculumPlan parse_plan(const std::string& text) {
  auto fail = [&](const std::string& why) -> PlanError {
    std::string list;
    for (const auto& p : valid_plans()) list += (list.empty() ? "" : ", ") + p;
    return PlanError("invalid plan '" + text + "': " + why + " (valid plans: " + list +
                     "; ':clip' and ':noadaln' may follow any plan)");
  };
  CurriculumPlan plan;
  std::stringstream parts(text);
  std::string head, suffix;
  std::getline(parts, head, ':');
  while (std::getline(parts, suffix, ':')) {
    if (suffix == "clip" && !plan.clip)
      plan.clip = true;
    else if (suffix == "noadaln" && !plan.no_adaln)
      plan.no_adaln = true;
    else
      throw fail("unknown variant '" + suffix + "'");
  }
  if (head.empty()) throw fail("no stages");
  std::stringstream tokens(head);
  std::string tok;
  while (std::getline(tokens, tok, '+')) {
    if (tok != "1" && tok != "2" && tok != "3") throw fail("unknown stage '" + tok + "'");
    const int k = tok[0] - '0';
    if (!plan.stages.empty() && k <= plan.stages.back()) throw fail("stages must be strictly increasing");
    plan.stages.push_back(k);
  }
  if (head.back() == '+') throw fail("trailing '+'");
  if ((plan.clip || plan.no_adaln) && plan.stages == std::vector<int>{1})
    throw fail("variants only affect contrastive stages");
  return plan;
}

TrainConfig apply_plan(TrainConfig cfg, const CurriculumPlan& plan) {
  if (plan.clip) cfg.stage2.loss = cfg.stage3.loss = ContrastiveLoss::clip;
  if (plan.no_adaln) cfg.model.text.adaln_enabled = false;
  return cfg;
}

std::uint64_t stage_seed(std::uint64_t seed, int stage) { return derive_seed(seed, 0x5747A6E0ULL + stage); }
std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1417ULL); }

// --- stage 1 -----------------------------------------------------------------

StageRecord run_stage1(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run,
                       const std::vector<Stream>& streams) {
  spec.validate();
  const Corpus& corpus = run.corpus;
  if (corpus.utterances.empty()) throw std::invalid_argument("stage 1: empty corpus");
  const auto& tcfg = model.config().text;
  const auto t0 = Clock::now();
  Rng init(seed);

  struct Head {
    Stream stream;
    const Vocabulary* vocab;
    ParameterSet<float> params;
    Conv1d<float> proj;
    std::unique_ptr<Adam<float>> opt;
  };
  std::vector<std::unique_ptr<Head>> heads;
  AdamOptions adam;
  adam.learning_rate = spec.learning_rate;
  adam.clip_norm = run.clip_norm;
  adam.weight_decay = spec.weight_decay;
  for (Stream s : streams) {
    auto h = std::make_unique<Head>();
    h->stream = s;
    h->vocab = s == Stream::phoneme ? &corpus.phonemes : &corpus.bpe;
    if (!h->vocab->has_mask()) throw std::invalid_argument(std::string("stage 1: ") + stream_name(s) + " vocabulary has no <mask>");
    h->proj = Conv1d<float>::make(h->params, std::string("mlm.") + stream_name(s) + ".head", tcfg.d_model,
                                  h->vocab->size(), 1, init);
    auto trainable = model.params().with_prefix(std::string("text.") + stream_name(s) + ".");
    for (auto* p : h->params.all()) trainable.push_back(p);
    h->opt = std::make_unique<Adam<float>>(trainable, adam);
    heads.push_back(std::move(h));
  }

  const int n = static_cast<int>(corpus.utterances.size());
  const MatrixF speakers = tcfg.adaln_enabled ? MatrixF::Zero(spec.batch_size, tcfg.d_speaker) : MatrixF();
  LossTrace trace;
  for (int step = 0; step < spec.steps; ++step) {
    const auto s0 = Clock::now();
    const std::uint64_t batch_seed = derive_seed(seed, static_cast<std::uint64_t>(step));
    Rng rng(batch_seed);
    double total = 0;
    json extra;
    for (auto& h : heads) {
      std::vector<int> ids, labels;
      Segments seg;
      for (int i = 0; i < spec.batch_size; ++i) {
        const Utterance& u = corpus.utterances[rng.below(static_cast<std::uint64_t>(n))];
        const auto& tokens = h->stream == Stream::phoneme ? u.phonemes : u.bpe;
        MlmRow row = mlm_mask(tokens, *h->vocab, spec.mask_probability, rng);
        ids.insert(ids.end(), row.input_ids.begin(), row.input_ids.end());
        labels.insert(labels.end(), row.labels.begin(), row.labels.end());
        seg.push(static_cast<int>(tokens.size()));
      }
      bool empty = false;
      Tape<float> tape;
      ForwardOptions opts{true, &rng};
      Var<float> hidden = model.text().encode_stream(tape, h->stream, ids, seg, speakers, opts);
      Var<float> loss = mlm_loss(h->proj(hidden, seg), labels, &empty);
      const double value = loss.scalar();
      require_finite(value, 1, *run.global_step);
      if (!empty) {
        model.params().zero_grad();
        h->params.zero_grad();
        tape.backward(loss);
        h->opt->step();
      }
      extra[std::string("loss_") + stream_name(h->stream)] = value;
      if (empty) extra[std::string("no_targets_") + stream_name(h->stream)] = true;
      total += value;
    }
    trace.values.push_back(total);
    json rec = step_record(++*run.global_step, 1, total, model, ms_since(s0));
    rec.update(extra);
    rec["batch_seed"] = batch_seed;
    if (run.log) run.log(rec);
  }
  return trace.finish(1, seed, t0);
}

// --- stages 2 and 3 ------------------------------------------------------------

namespace {

StageRecord run_contrastive(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run,
                            int stage) {
  spec.validate();
  const Corpus& corpus = run.corpus;
  const auto t0 = Clock::now();
  const bool clip = spec.loss == ContrastiveLoss::clip;

  std::vector<Parameter<float>*> trainable;
  for (auto* p : model.params().all())
    if (!(clip && p == &model.logit_bias())) trainable.push_back(p);
  AdamOptions adam;
  adam.learning_rate = spec.learning_rate;
  adam.clip_norm = run.clip_norm;
  adam.weight_decay = spec.weight_decay;
  Adam<float> opt(trainable, adam);
  opt.set_lr_scale(model.logit_scale(), run.logit_lr_scale);
  opt.exclude_from_decay(model.logit_scale());
  if (!clip) {
    opt.set_lr_scale(model.logit_bias(), run.logit_lr_scale);
    opt.exclude_from_decay(model.logit_bias());
  }

  const MatrixF speakers = model.speaker_table(corpus);
  std::unique_ptr<PhonemeIndex> index;
  std::vector<int> eligible;
  if (stage == 3) {
    index = std::make_unique<PhonemeIndex>(corpus);
    eligible = index->eligible(spec.batch_size);
    if (eligible.empty())
      throw std::invalid_argument("stage 3: no phoneme type occurs in " + std::to_string(spec.batch_size) +
                                  " or more utterances");
  } else if (static_cast<int>(corpus.utterances.size()) < spec.batch_size) {
    throw std::invalid_argument("stage 2: corpus has fewer utterances than batch_size");
  }

  LossTrace trace;
  for (int step = 0; step < spec.steps; ++step) {
    const auto s0 = Clock::now();
    const std::uint64_t batch_seed = derive_seed(seed, static_cast<std::uint64_t>(step));
    Rng rng(batch_seed);
    ContrastiveBatch batch =
        stage == 2 ? sample_mixed_batch(corpus, spec.batch_size, rng)
                   : sample_same_phoneme_batch(*index, eligible[rng.below(eligible.size())], spec.batch_size, rng);
    batch.seed = batch_seed;

    model.params().zero_grad();
    Tape<float> tape;
    ForwardOptions opts{true, &rng};
    auto emb = embed_pairs(tape, model, corpus, batch, speakers, opts);
    Var<float> t = tape.parameter(model.logit_scale());
    Var<float> loss = clip ? clip_loss(emb.text, emb.audio, t)
                           : siglip_loss(emb.text, emb.audio, t, tape.parameter(model.logit_bias()));
    const double value = loss.scalar();
    require_finite(value, stage, *run.global_step);
    tape.backward(loss);
    const double grad_norm = opt.step();
    trace.values.push_back(value);

    json rec = step_record(++*run.global_step, stage, value, model, ms_since(s0));
    rec["batch_seed"] = batch_seed;
    rec["grad_norm"] = grad_norm;
    if (stage == 3) rec["phoneme"] = batch.items.front().phoneme;
    if (run.log) run.log(rec);
  }
  return trace.finish(stage, seed, t0);
}

}  // namespace

StageRecord run_stage2(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run) {
  return run_contrastive(model, spec, seed, run, 2);
}

StageRecord run_stage3(ProsodyModel<float>& model, const StageSpec& spec, std::uint64_t seed, const StageRun& run) {
  return run_contrastive(model, spec, seed, run, 3);
}

// --- plans -----------------------------------------------------------------------

namespace {

// Everything that shaped the finished stages must agree; later stages may differ.
std::string resume_conflict(const TrainConfig& had, const TrainConfig& want, const std::vector<int>& done) {
  if (!(had.model == want.model)) return "model";
  if (had.seed != want.seed) return "seed";
  if (had.clip_norm != want.clip_norm) return "clip_norm";
  if (had.logit_lr_scale != want.logit_lr_scale) return "logit_lr_scale";
  for (int k : done)
    if (!(had.stage(k) == want.stage(k))) return "stage" + std::to_string(k);
  return {};
}

}  // namespace

PlanResult run_plan(const CurriculumPlan& plan, const Corpus& corpus, const TrainConfig& cfg,
                    const std::filesystem::path& out_dir, const Checkpoint* resume, const StepLogger& observer) {
  if (plan.stages.empty()) throw PlanError("empty plan");
  const TrainConfig eff = apply_plan(cfg, plan);
  eff.validate();
  const std::string corpus_hash = corpus_fingerprint(corpus);

  std::unique_ptr<ProsodyModel<float>> model;
  Checkpoint ckpt;
  std::size_t start = 0;
  if (resume) {
    if (std::string why = resume_conflict(resume->config, eff, resume->completed_stages); !why.empty())
      throw ResumeMismatch("checkpoint config snapshot differs from the requested config: " + why);
    if (resume->corpus_hash != corpus_hash) throw ResumeMismatch("checkpoint was trained on a different corpus");
    const auto& done = resume->completed_stages;
    if (done.size() > plan.stages.size() || !std::equal(done.begin(), done.end(), plan.stages.begin()))
      throw ResumeMismatch("checkpoint stages '" + resume->plan_label + "' are not a prefix of plan '" + plan.label() + "'");
    model = restore_model(*resume);
    ckpt = *resume;
    ckpt.config = eff;
    start = done.size();
  } else {
    model = std::make_unique<ProsodyModel<float>>(eff.model, corpus.phonemes.size(), corpus.bpe.size(),
                                                  init_seed(eff.seed));
    ckpt.config = eff;
    ckpt.corpus_hash = corpus_hash;
    ckpt.seed = eff.seed;
  }
  if (model->phoneme_vocab() != corpus.phonemes.size() || model->bpe_vocab() != corpus.bpe.size())
    throw ResumeMismatch("vocabulary sizes differ between checkpoint and corpus");

  std::filesystem::create_directories(out_dir);
  PlanResult result;
  result.log_path = out_dir / "run_log.jsonl";
  std::ofstream log(result.log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write run log in " + out_dir.string());
  StageRun run{corpus, [&](const json& rec) {
                 log << rec.dump() << '\n';
                 if (observer) observer(rec);
               }, &ckpt.global_step, eff.clip_norm, eff.logit_lr_scale};

  for (std::size_t i = start; i < plan.stages.size(); ++i) {
    const int k = plan.stages[i];
    const std::uint64_t seed = stage_seed(eff.seed, k);
    StageRecord rec = k == 1   ? run_stage1(*model, eff.stage1, seed, run)
                      : k == 2 ? run_stage2(*model, eff.stage2, seed, run)
                               : run_stage3(*model, eff.stage3, seed, run);
    log.flush();
    ckpt.history.push_back(rec);
    ckpt.completed_stages.push_back(k);
    ckpt.plan_label = plan.prefix(i + 1).label();
    ckpt.rng_state = Rng(derive_seed(seed, static_cast<std::uint64_t>(rec.steps))).state();
    capture_parameters(*model, ckpt);
    const auto path = out_dir / ("stage" + std::to_string(k) + ".ckpt");
    save_checkpoint(ckpt, path);
    result.checkpoints.push_back(path);
  }
  result.final = ckpt;
  return result;
}

}  // namespace prosody
