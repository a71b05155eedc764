#include "prosody/eval.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace prosody {

using nlohmann::json;

std::string to_string(MetricFamily f) { return f == MetricFamily::sim ? "sim" : "diff"; }

std::string to_string(Direction d) {
  switch (d) {
    case Direction::text_to_audio: return "text_to_audio";
    case Direction::audio_to_text: return "audio_to_text";
    case Direction::mean: return "mean";
  }
  return "?";
}

namespace {

// rank of entry `target` among `scores`, ties resolved toward lower index
template <class Get>
int rank_of(int n, int target, Get get) {
  const double s = get(target);
  int rank = 0;
  for (int j = 0; j < n; ++j) {
    const double v = get(j);
    if (v > s || (v == s && j < target)) ++rank;
  }
  return rank;
}

}  // namespace

std::vector<double> recall_at_k(const MatrixD& sim, const std::vector<int>& ks, Direction direction) {
  const int n = static_cast<int>(sim.rows());
  if (n == 0 || sim.cols() != n)
    throw std::invalid_argument("recall_at_k: similarity matrix must be square and non-empty, got " +
                                std::to_string(sim.rows()) + "x" + std::to_string(sim.cols()));
  for (int k : ks)
    if (k < 1 || k > n) throw std::invalid_argument("recall_at_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");

  std::vector<int> row_rank(n), col_rank(n);
  for (int i = 0; i < n; ++i) {
    row_rank[i] = rank_of(n, i, [&](int j) { return sim(i, j); });
    col_rank[i] = rank_of(n, i, [&](int j) { return sim(j, i); });
  }
  std::vector<double> out;
  for (int k : ks) {
    int t2a = 0, a2t = 0;
    for (int i = 0; i < n; ++i) {
      t2a += row_rank[i] < k;
      a2t += col_rank[i] < k;
    }
    const double r_t = static_cast<double>(t2a) / n, r_a = static_cast<double>(a2t) / n;
    out.push_back(direction == Direction::text_to_audio   ? r_t
                  : direction == Direction::audio_to_text ? r_a
                                                          : 0.5 * (r_t + r_a));
  }
  return out;
}

double RetrievalReport::at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw std::out_of_range("RetrievalReport: no recall for k = " + std::to_string(k));
}

void to_json(json& j, const RetrievalReport& r) {
  j = json{{"metric_family", to_string(r.family)},
           {"ks", r.ks},
           {"recall", r.recall},
           {"text_to_audio", r.text_to_audio},
           {"audio_to_text", r.audio_to_text},
           {"direction", to_string(r.direction)},
           {"n_batches", r.n_batches},
           {"batch_size", r.batch_size},
           {"seed", r.seed}};
}

namespace {

RetrievalReport evaluate(const ProsodyModel<float>& model, const Corpus& corpus, const EvalConfig& cfg,
                         MetricFamily family, const EmbeddingHook& hook) {
  cfg.validate();
  const int n = cfg.batch_size;
  for (int k : cfg.ks)
    if (k > n) throw std::invalid_argument("eval: k = " + std::to_string(k) + " exceeds batch_size " + std::to_string(n));

  std::unique_ptr<PhonemeIndex> index;
  std::vector<int> eligible;
  if (family == MetricFamily::sim) {
    index = std::make_unique<PhonemeIndex>(corpus);
    eligible = index->eligible(n);
    if (eligible.empty())
      throw std::invalid_argument("eval_rk_sim: no phoneme type occurs in " + std::to_string(n) + " or more utterances");
  } else if (static_cast<int>(corpus.utterances.size()) < n) {
    throw std::invalid_argument("eval_rk_diff: corpus has " + std::to_string(corpus.utterances.size()) +
                                " utterances, fewer than batch_size " + std::to_string(n));
  }

  const MatrixF speakers = model.speaker_table(corpus);
  const std::size_t nk = cfg.ks.size();
  std::vector<double> t2a(nk, 0.0), a2t(nk, 0.0);
  for (int b = 0; b < cfg.n_batches; ++b) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(b)));
    const ContrastiveBatch batch =
        family == MetricFamily::diff
            ? sample_mixed_batch(corpus, n, rng)
            : sample_same_phoneme_batch(*index, eligible[rng.below(eligible.size())], n, rng);
    Tape<float> tape(false);
    auto emb = embed_pairs(tape, model, corpus, batch, speakers, ForwardOptions{false, nullptr});
    MatrixF text = emb.text.value(), audio = emb.audio.value();
    if (hook) hook(text, audio);
    MatrixD tn = text.cast<double>(), an = audio.cast<double>();
    tn.rowwise().normalize();
    an.rowwise().normalize();
    const MatrixD sim = tn * an.transpose();
    const auto rt = recall_at_k(sim, cfg.ks, Direction::text_to_audio);
    const auto ra = recall_at_k(sim, cfg.ks, Direction::audio_to_text);
    for (std::size_t i = 0; i < nk; ++i) {
      t2a[i] += rt[i];
      a2t[i] += ra[i];
    }
  }

  RetrievalReport r;
  r.family = family;
  r.ks = cfg.ks;
  r.direction = Direction::mean;
  r.n_batches = cfg.n_batches;
  r.batch_size = n;
  r.seed = cfg.seed;
  for (std::size_t i = 0; i < nk; ++i) {
    r.text_to_audio.push_back(t2a[i] / cfg.n_batches);
    r.audio_to_text.push_back(a2t[i] / cfg.n_batches);
    r.recall.push_back(0.5 * (r.text_to_audio[i] + r.audio_to_text[i]));
  }
  return r;
}

}  // namespace

RetrievalReport eval_rk_diff(const ProsodyModel<float>& model, const Corpus& corpus, const EvalConfig& cfg,
                             const EmbeddingHook& hook) {
  return evaluate(model, corpus, cfg, MetricFamily::diff, hook);
}

RetrievalReport eval_rk_sim(const ProsodyModel<float>& model, const Corpus& corpus, const EvalConfig& cfg,
                            const EmbeddingHook& hook) {
  return evaluate(model, corpus, cfg, MetricFamily::sim, hook);
}

// --- grid ----------------------------------------------------------------------

void to_json(json& j, const AblationRow& r) {
  j = json{{"plan", r.plan}, {"display", r.display}, {"seed", r.seed}, {"train_seconds", r.train_seconds}};
  if (r.sim) j["sim"] = *r.sim;
  if (r.diff) j["diff"] = *r.diff;
  if (!r.reused_prefix.empty()) j["reused_prefix"] = r.reused_prefix;
  if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
  if (!r.error.empty()) j["error"] = r.error;
}

std::vector<CurriculumPlan> reference_grid() {
  std::vector<CurriculumPlan> out;
  for (const char* p : {"1+3", "1+2", "2+3", "3", "2", "2:clip", "2:noadaln", "1+2+3"}) out.push_back(parse_plan(p));
  return out;
}

namespace {

std::string dir_name(const std::string& label) {
  std::string s = "plan_";
  for (char c : label) s += (c == '+') ? '-' : (c == ':') ? '_' : c;
  return s;
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const std::vector<CurriculumPlan>& plans, const Corpus& corpus,
                                           const GridOptions& options) {
  options.eval.validate();
  std::map<std::string, std::filesystem::path> trained;  // prefix label -> checkpoint
  std::vector<AblationRow> rows;
  for (const auto& plan : plans) {
    AblationRow row;
    row.plan = plan.label();
    row.display = plan.display();
    row.seed = options.train.seed;
    if (options.progress) options.progress("plan " + row.plan);
    try {
      const auto dir = options.work_dir / dir_name(row.plan);
      std::optional<Checkpoint> base;
      std::size_t have = 0;
      if (options.reuse_prefixes)
        for (std::size_t n = plan.stages.size(); n >= 1 && !base; --n)
          if (auto it = trained.find(plan.prefix(n).label()); it != trained.end()) {
            base = load_checkpoint(it->second);
            have = n;
            row.reused_prefix = it->first;
            row.checkpoint = it->second.string();
          }

      Checkpoint final_ckpt;
      if (base && have == plan.stages.size()) {
        final_ckpt = *base;
      } else {
        PlanResult res = run_plan(plan, corpus, options.train, dir, base ? &*base : nullptr, options.observer);
        for (std::size_t i = 0; i < res.checkpoints.size(); ++i)
          trained[plan.prefix(have + i + 1).label()] = res.checkpoints[i];
        final_ckpt = res.final;
        row.checkpoint = res.checkpoints.back().string();
      }
      for (const auto& h : final_ckpt.history) row.train_seconds += h.wall_seconds;

      auto model = restore_model(final_ckpt);
      row.sim = eval_rk_sim(*model, corpus, options.eval);
      row.diff = eval_rk_diff(*model, corpus, options.eval);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.sim.reset();
      row.diff.reset();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_table(const std::vector<AblationRow>& rows) {
  std::size_t width = std::string("Curriculum").size();
  for (const auto& r : rows) width = std::max(width, r.display.size());
  const std::vector<std::string> heads{"R@1-sim", "R@5-sim", "R@10-sim", "R@1-diff", "R@5-diff", "R@10-diff"};

  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::ostringstream out;
  out << pad("Curriculum", width);
  for (const auto& h : heads) out << " | " << pad(h, 9);
  out << '\n';
  const std::string rule(width + heads.size() * 12, '-');
  out << rule << '\n';

  auto cell = [](const std::optional<RetrievalReport>& r, int k) -> std::string {
    if (!r) return "-";
    try {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", r->at(k));
      return buf;
    } catch (const std::out_of_range&) {
      return "-";
    }
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.plan == "1+2+3" && i > 0) out << rule << '\n';
    out << pad(r.display, width);
    for (const auto& [fam, k] : std::vector<std::pair<int, int>>{{0, 1}, {0, 5}, {0, 10}, {1, 1}, {1, 5}, {1, 10}})
      out << " | " << pad(cell(fam == 0 ? r.sim : r.diff, k), 9);
    if (!r.ok()) out << " | error: " << r.error;
    out << '\n';
  }
  return out.str();
}

}  // namespace prosody
