#include "cli.hpp"

#include "prosody/eval.hpp"
#include "prosody/serialization.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef PROSODY_VERSION
#define PROSODY_VERSION "0.0.0"
#endif
#ifndef PROSODY_BUILD_INFO
#define PROSODY_BUILD_INFO "unknown"
#endif

namespace prosody::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// "strict" (default) pins Eigen to one thread; "threaded" lets it choose.
std::string fp_mode() {
  const char* v = std::getenv("PROSODY_FP_MODE");
  const std::string mode = v && *v ? v : "strict";
  if (mode != "strict" && mode != "threaded")
    throw UsageError("PROSODY_FP_MODE must be 'strict' or 'threaded', got '" + mode + "'");
  return mode;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string checkpoint_digest(Checkpoint c) {
  for (auto& h : c.history) h.wall_seconds = 0;
  return sha256_hex(serialize_checkpoint(c));
}

json file_ref(const fs::path& p, const std::string& hash) { return {{"path", fs::absolute(p).string()}, {"sha256", hash}}; }

Corpus load_verified_corpus(const json& ref) {
  const fs::path path = ref.at("path").get<std::string>();
  Corpus c = load_corpus(path);
  if (corpus_fingerprint(c) != ref.at("sha256").get<std::string>())
    throw std::runtime_error("corpus " + path.string() + " does not match the recorded hash");
  return c;
}

json corpus_ref(const fs::path& path) {
  return file_ref(path, corpus_fingerprint(load_corpus(path)));
}

TrainConfig train_config_from(const std::string& path) {
  return path.empty() ? TrainConfig{} : parse_config<TrainConfig>(read_json_file(path), path);
}

EvalConfig eval_config_from(const std::string& path) {
  return path.empty() ? EvalConfig{} : parse_config<EvalConfig>(read_json_file(path), path);
}

StepLogger step_printer(int every, std::ostream& err) {
  if (every <= 0) return {};
  return [every, &err](const json& rec) {
    if (rec.at("step").get<long>() % every == 0) err << rec.dump() << '\n';
  };
}

// --- commands: each takes fully resolved inputs, writes under `out` and
// --- returns digests of its deterministic outputs.

json do_corpus_gen(const json& in, const fs::path& out, std::ostream& log) {
  const auto spec = parse_config<SyntheticCorpusSpec>(in.at("spec"), "spec");
  const Corpus corpus = generate_synthetic_corpus(spec);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_corpus(corpus, out);
  log << "wrote " << corpus.utterances.size() << " utterances to " << out.string() << '\n';
  return {{"corpus", corpus_fingerprint(corpus)}};
}

json do_train(const json& in, const fs::path& out, std::ostream& log, int log_every) {
  const CurriculumPlan plan = parse_plan(in.at("plan").get<std::string>());
  const auto cfg = parse_config<TrainConfig>(in.at("config"), "config");
  const Corpus corpus = load_verified_corpus(in.at("corpus"));
  std::optional<Checkpoint> resume;
  if (in.contains("resume")) {
    const fs::path rp = in["resume"].at("path").get<std::string>();
    if (file_sha256(rp) != in["resume"].at("sha256").get<std::string>())
      throw std::runtime_error("checkpoint " + rp.string() + " does not match the recorded hash");
    resume = load_checkpoint(rp);
  }
  const PlanResult r = run_plan(plan, corpus, cfg, out, resume ? &*resume : nullptr, step_printer(log_every, log));
  json outputs;
  for (const auto& p : r.checkpoints) outputs[p.filename().string()] = checkpoint_digest(load_checkpoint(p));
  for (const auto& h : r.final.history)
    log << "stage " << h.stage << ": " << h.steps << " steps, final loss " << h.final_loss << ", tail loss "
        << h.tail_loss << ", " << h.wall_seconds << " s\n";
  return outputs;
}

json do_eval(const json& in, const fs::path& out, std::ostream& log) {
  const fs::path cp = in.at("checkpoint").at("path").get<std::string>();
  if (file_sha256(cp) != in["checkpoint"].at("sha256").get<std::string>())
    throw std::runtime_error("checkpoint " + cp.string() + " does not match the recorded hash");
  const Checkpoint ckpt = load_checkpoint(cp);
  const Corpus corpus = load_verified_corpus(in.at("corpus"));
  const auto cfg = parse_config<EvalConfig>(in.at("eval"), "eval config");
  const std::string family = in.at("family").get<std::string>();

  if (ckpt.phoneme_vocab != corpus.phonemes.size() || ckpt.bpe_vocab != corpus.bpe.size() ||
      ckpt.config.model.acoustic.feature_dim != corpus.feature_dim)
    throw std::runtime_error("checkpoint/corpus mismatch: vocabulary sizes or feature dimension differ");
  auto model = restore_model(ckpt);

  json report{{"checkpoint", in["checkpoint"]},
              {"plan", ckpt.plan_label},
              {"corpus_hash", in["corpus"]["sha256"]},
              {"same_corpus_as_training", ckpt.corpus_hash == in["corpus"]["sha256"]},
              {"reports", json::array()}};
  AblationRow row;
  row.plan = ckpt.plan_label;
  row.display = ckpt.plan_label.empty() ? "untrained" : parse_plan(ckpt.plan_label).display();
  if (family == "sim" || family == "both") {
    row.sim = eval_rk_sim(*model, corpus, cfg);
    report["reports"].push_back(*row.sim);
  }
  if (family == "diff" || family == "both") {
    row.diff = eval_rk_diff(*model, corpus, cfg);
    report["reports"].push_back(*row.diff);
  }
  for (const auto& r : {row.sim, row.diff})
    if (r)
      for (std::size_t i = 0; i < r->ks.size(); ++i)
        log << "R@" << r->ks[i] << "-" << to_string(r->family) << " = " << r->recall[i] << '\n';
  if (family == "both") {
    report["table"] = render_table({row});
    log << render_table({row});
  }
  const std::string text = report.dump(2) + '\n';
  write_text(out, text);
  return {{"report", sha256_hex(text)}};
}

json do_ablate(const json& in, const fs::path& out, std::ostream& log, int log_every) {
  std::vector<CurriculumPlan> plans;
  for (const auto& p : in.at("plans")) plans.push_back(parse_plan(p.get<std::string>()));
  GridOptions opt;
  opt.train = parse_config<TrainConfig>(in.at("config"), "config");
  opt.eval = parse_config<EvalConfig>(in.at("eval"), "eval config");
  opt.reuse_prefixes = in.at("reuse_prefixes").get<bool>();
  opt.work_dir = out / "runs";
  opt.progress = [&log](const std::string& s) { log << s << '\n'; };
  opt.observer = step_printer(log_every, log);
  const Corpus corpus = load_verified_corpus(in.at("corpus"));

  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation_grid(plans, corpus, opt);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json results = json::array(), timing{{"grid_wall_seconds", total}, {"rows", json::array()}};
  for (const auto& r : rows) {
    json j{{"plan", r.plan}, {"display", r.display}, {"seed", r.seed}};
    if (r.sim) j["sim"] = *r.sim;
    if (r.diff) j["diff"] = *r.diff;
    if (!r.ok()) j["error"] = r.error;
    results.push_back(j);
    timing["rows"].push_back(
        {{"plan", r.plan}, {"train_seconds", r.train_seconds}, {"reused_prefix", r.reused_prefix}, {"checkpoint", r.checkpoint}});
  }
  const std::string rows_text = results.dump(2) + '\n', table = render_table(rows);
  write_text(out / "rows.json", rows_text);
  write_text(out / "table.txt", table);
  write_text(out / "timing.json", timing.dump(2) + '\n');
  log << table << "grid wall time " << total << " s\n";
  int failed = 0;
  for (const auto& r : rows) failed += !r.ok();
  if (failed) log << failed << " plan(s) failed; see rows.json\n";
  return {{"rows.json", sha256_hex(rows_text)}, {"table.txt", sha256_hex(table)}};
}

json do_defaults(const fs::path& out) {
  json outputs;
  auto put = [&](const std::string& name, const json& j) {
    const std::string text = j.dump(2) + '\n';
    write_text(out / name, text);
    outputs[name] = sha256_hex(text);
  };
  put("train.json", TrainConfig{});
  put("eval.json", EvalConfig{});
  put("corpus_spec.json", SyntheticCorpusSpec{});
  return outputs;
}

json dispatch(const std::string& command, const json& in, const fs::path& out, std::ostream& log, int log_every) {
  if (command == "corpus-gen") return do_corpus_gen(in, out, log);
  if (command == "train") return do_train(in, out, log, log_every);
  if (command == "eval") return do_eval(in, out, log);
  if (command == "ablate") return do_ablate(in, out, log, log_every);
  if (command == "defaults") return do_defaults(out);
  throw UsageError("manifest names unknown command '" + command + "'");
}

fs::path manifest_path(const std::string& command, const fs::path& out) {
  const bool file_output = command == "corpus-gen" || command == "eval";
  return file_output ? fs::path(out.string() + ".manifest.json") : out / "manifest.json";
}

json seeds_of(const std::string& command, const json& in) {
  json s = json::object();
  if (in.contains("spec")) s["corpus"] = in["spec"].at("seed");
  if (in.contains("config")) {
    const auto seed = in["config"].at("seed").get<std::uint64_t>();
    s["train"] = seed;
    s["init"] = init_seed(seed);
    for (int k = 1; k <= 3; ++k) s["stage" + std::to_string(k)] = stage_seed(seed, k);
  }
  if (in.contains("eval")) s["eval"] = in["eval"].at("seed");
  (void)command;
  return s;
}

/// Runs a command and writes its manifest next to the outputs.
json execute(const std::string& command, const json& in, const fs::path& out, const std::vector<std::string>& argv,
             std::ostream& log, int log_every) {
  const std::string mode = fp_mode();
  Eigen::setNbThreads(mode == "strict" ? 1 : 0);
  json m{{"tool", "prosody"},
         {"version", PROSODY_VERSION},
         {"build", PROSODY_BUILD_INFO},
         {"command", command},
         {"argv", argv},
         {"inputs", in},
         {"config_hash", sha256_hex(in.dump())},
         {"seeds", seeds_of(command, in)},
         {"fp_mode", mode},
         {"started_at", utc_now()}};
  if (in.contains("corpus")) m["corpus_hash"] = in["corpus"]["sha256"];
  m["outputs"] = dispatch(command, in, out, log, log_every);
  m["finished_at"] = utc_now();
  write_text(manifest_path(command, out), m.dump(2) + '\n');
  return m;
}

int replay(const fs::path& manifest_file, const fs::path& out, std::ostream& stdout_, std::ostream& log,
           const std::vector<std::string>& argv) {
  const json m = read_json_file(manifest_file);
  const std::string command = m.at("command").get<std::string>();
  if (m.contains("fp_mode") && m["fp_mode"] != fp_mode())
    log << "warning: manifest was recorded with PROSODY_FP_MODE=" << m["fp_mode"].get<std::string>() << '\n';
  const json again = execute(command, m.at("inputs"), out, argv, log, 0);
  bool same = true;
  for (const auto& [name, digest] : m.at("outputs").items()) {
    const bool match = again["outputs"].contains(name) && again["outputs"][name] == digest;
    same &= match;
    stdout_ << (match ? "match    " : "MISMATCH ") << name << '\n';
  }
  if (again["outputs"].size() != m["outputs"].size()) {
    same = false;
    stdout_ << "MISMATCH output set differs\n";
  }
  stdout_ << (same ? "replay identical" : "replay differs") << '\n';
  return same ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-stream prosody encoder: synthetic corpora, curriculum training and retrieval evaluation"};
  app.name("prosody");
  app.require_subcommand(1);
  app.set_version_flag("--version", PROSODY_VERSION);

  std::string spec_path, out_path, plan, config_path, eval_path, corpus_path, resume_path, checkpoint_path,
      family = "both", manifest_file, plans_csv;
  std::optional<std::uint64_t> seed;
  int log_every = 0;
  bool no_reuse = false;

  auto* gen = app.add_subcommand("corpus-gen", "Generate a synthetic corpus");
  gen->add_option("--spec", spec_path, "SyntheticCorpusSpec JSON (defaults when omitted)");
  gen->add_option("--out", out_path, "Corpus file to write")->required();
  gen->add_option("--seed", seed, "Override the spec seed");

  auto* train = app.add_subcommand("train", "Run a curriculum plan");
  train->add_option("--plan", plan, "Plan such as 1+2 or 2:clip")->required();
  train->add_option("--config", config_path, "TrainConfig JSON (defaults when omitted)");
  train->add_option("--corpus", corpus_path, "Corpus file")->required();
  train->add_option("--out", out_path, "Output directory")->required();
  train->add_option("--resume", resume_path, "Checkpoint whose stages prefix the plan");
  train->add_option("--seed", seed, "Override the training seed");
  train->add_option("--log-every", log_every, "Print every n-th step record to stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate R@k-sim and/or R@k-diff of a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--corpus", corpus_path, "Corpus file")->required();
  eval->add_option("--family", family, "sim, diff or both")->check(CLI::IsMember({"sim", "diff", "both"}));
  eval->add_option("--eval-config", eval_path, "EvalConfig JSON (defaults when omitted)");
  eval->add_option("--seed", seed, "Override the evaluation seed");
  eval->add_option("--out", out_path, "Report JSON to write")->required();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of plans");
  ablate->add_option("--plans", plans_csv, "Comma separated plans (default: the reference grid)");
  ablate->add_option("--config", config_path, "TrainConfig JSON (defaults when omitted)");
  ablate->add_option("--eval-config", eval_path, "EvalConfig JSON (defaults when omitted)");
  ablate->add_option("--corpus", corpus_path, "Corpus file")->required();
  ablate->add_option("--out", out_path, "Output directory")->required();
  ablate->add_option("--seed", seed, "Override the training seed");
  ablate->add_flag("--no-prefix-reuse", no_reuse, "Train every plan from scratch");
  ablate->add_option("--log-every", log_every, "Print every n-th step record to stderr");

  auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  rep->add_option("--manifest", manifest_file, "Manifest written by an earlier run")->required();
  rep->add_option("--out", out_path, "Where the repeated run writes its outputs")->required();

  auto* defaults = app.add_subcommand("defaults", "Write the default configuration files");
  defaults->add_option("--out", out_path, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  const std::vector<std::string> argv = args;
  try {
    if (rep->parsed()) return replay(manifest_file, out_path, out, err, argv);

    json in;
    std::string command;
    if (gen->parsed()) {
      command = "corpus-gen";
      auto spec = spec_path.empty() ? SyntheticCorpusSpec{}
                                    : parse_config<SyntheticCorpusSpec>(read_json_file(spec_path), spec_path);
      if (seed) spec.seed = *seed;
      in["spec"] = spec;
    } else if (train->parsed()) {
      command = "train";
      in["plan"] = parse_plan(plan).label();
      auto cfg = train_config_from(config_path);
      if (seed) cfg.seed = *seed;
      in["config"] = cfg;
      in["corpus"] = corpus_ref(corpus_path);
      if (!resume_path.empty()) in["resume"] = file_ref(resume_path, file_sha256(resume_path));
    } else if (eval->parsed()) {
      command = "eval";
      in["checkpoint"] = file_ref(checkpoint_path, file_sha256(checkpoint_path));
      in["corpus"] = corpus_ref(corpus_path);
      auto cfg = eval_config_from(eval_path);
      if (seed) cfg.seed = *seed;
      in["eval"] = cfg;
      in["family"] = family;
    } else if (ablate->parsed()) {
      command = "ablate";
      json plans = json::array();
      if (plans_csv.empty()) {
        for (const auto& p : reference_grid()) plans.push_back(p.label());
      } else {
        std::stringstream ss(plans_csv);
        std::string p;
        while (std::getline(ss, p, ',')) plans.push_back(parse_plan(p).label());
      }
      in["plans"] = plans;
      auto cfg = train_config_from(config_path);
      if (seed) cfg.seed = *seed;
      in["config"] = cfg;
      in["eval"] = eval_config_from(eval_path);
      in["corpus"] = corpus_ref(corpus_path);
      in["reuse_prefixes"] = !no_reuse;
    } else {
      command = "defaults";
    }
    const json m = execute(command, in, out_path, argv, err, log_every);
    out << manifest_path(command, out_path).string() << '\n';
    return kExitOk;
  } catch (const PlanError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace prosody::cli
