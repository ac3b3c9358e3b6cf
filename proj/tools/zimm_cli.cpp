// zimm: synthetic generation, cohort build, training, evaluation, baselines,
// statistical comparison and self checks.
//
// Exit codes: 0 success, 1 internal failure, 2 usage or validation error,
// 3 integrity error (hash mismatch).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "zimm/baselines.hpp"
#include "zimm/cohort.hpp"
#include "zimm/container.hpp"
#include "zimm/errors.hpp"
#include "zimm/model.hpp"
#include "zimm/scores.hpp"
#include "zimm/selfcheck.hpp"
#include "zimm/synthetic.hpp"
#include "zimm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zimm;

namespace {

constexpr double kGradTolerance = 1e-5;

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }
  json& operator[](const char* key) { return doc_[key]; }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = file_hash(p); }
  void output(const fs::path& p) { doc_["outputs"][p.string()] = file_hash(p); }
  void write(const fs::path& path) {
    doc_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create directory " + dir.string());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

// Checks `artifact` against the output hash recorded by the manifest that
// produced it, when that manifest exists.
void verify_artifact(const fs::path& artifact, const fs::path& manifest) {
  if (!fs::exists(artifact)) throw ValidationError("missing artifact " + artifact.string());
  if (!fs::exists(manifest)) return;
  json m;
  try {
    std::ifstream in(manifest);
    in >> m;
  } catch (const json::exception& e) {
    throw IntegrityError("unreadable manifest " + manifest.string() + ": " + e.what());
  }
  const json& outputs = m.at("outputs");
  for (const auto& [path, hash] : outputs.items()) {
    if (fs::path(path).filename() != artifact.filename()) continue;
    if (hash.get<std::string>() != file_hash(artifact)) {
      throw IntegrityError(artifact.string() + " does not match the hash recorded in " + manifest.string());
    }
    return;
  }
}

Cohort load_verified_cohort(const fs::path& dir, Manifest& manifest) {
  const fs::path bin = dir / "cohort.bin";
  verify_artifact(bin, dir / "manifest.json");
  manifest.input(bin);
  return load_cohort(bin);
}

ModelConfig config_or_default(const std::string& path) {
  return path.empty() ? ModelConfig{} : load_config(path);
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

// ---- commands -------------------------------------------------------------------

struct GenerateArgs {
  std::size_t patients = 10000;
  std::uint64_t seed = 42;
  std::string out;
};

void run_generate(const GenerateArgs& a) {
  SyntheticConfig cfg;
  cfg.patients = a.patients;
  cfg.seed = a.seed;
  cfg.validate();
  ensure_dir(a.out);
  Manifest m("generate");
  m["config"] = cfg.to_json();
  m["seed"] = a.seed;
  const SyntheticData data = generate_synthetic(cfg);
  const fs::path dir(a.out);
  write_synthetic(data, dir);
  for (const char* f : {"events.jsonl", "patients.jsonl", "latent.jsonl"}) m.output(dir / f);
  m["records"] = data.events.size();
  m.write(dir / "manifest.json");
  std::cout << "wrote " << data.events.size() << " events for " << data.patients.size() << " patients to "
            << dir.string() << '\n';
}

struct CohortArgs {
  std::string events, patients, config, out;
  std::optional<std::uint64_t> seed;
};

void run_cohort(const CohortArgs& a) {
  const ModelConfig cfg = config_or_default(a.config);
  const std::uint64_t seed = a.seed.value_or(cfg.training.seed);
  ensure_dir(a.out);
  Manifest m("cohort");
  m.input(a.events);
  m.input(a.patients);
  if (!a.config.empty()) m.input(a.config);
  m["seed"] = seed;
  m["config"] = cfg.to_json().at("preprocessing");
  const Cohort cohort = build_cohort(parse_events(a.events), parse_patients(a.patients), cfg.preprocessing, seed);
  const fs::path dir(a.out);
  save_cohort(cohort, dir / "cohort.bin");
  json report = cohort.report.to_json();
  report["splits"] = {{"train", cohort.train.size()}, {"val", cohort.val.size()}, {"test", cohort.test.size()}};
  report["vocab_sizes"] = {{"drug", cohort.vocab.size(CodeType::drug)},
                           {"procedure", cohort.vocab.size(CodeType::procedure)},
                           {"diagnosis", cohort.vocab.size(CodeType::diagnosis)}};
  report["vocab_hash"] = cohort.vocab.hash();
  write_json(dir / "report.json", report);
  m.output(dir / "cohort.bin");
  m.output(dir / "report.json");
  m.write(dir / "manifest.json");
  print(report);
}

struct TrainArgs {
  std::string cohort, config, out, log;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void run_train(const TrainArgs& a) {
  Manifest m("train");
  const Cohort cohort = load_verified_cohort(a.cohort, m);
  ModelConfig cfg = fit_config_to_cohort(config_or_default(a.config), cohort);
  if (!a.config.empty()) m.input(a.config);
  if (a.seed) cfg.training.seed = *a.seed;
  if (a.epochs) cfg.training.epochs = *a.epochs;
  cfg.validate();
  m["config"] = cfg.to_json();
  m["seed"] = cfg.training.seed;
  ensure_parent(a.out);
  TrainOptions opt;
  opt.threads = a.threads.value_or(default_threads());
  opt.log_path = a.log.empty() ? sibling(a.out, ".log.jsonl") : fs::path(a.log);
  opt.on_epoch = [](const EpochRecord& r) { std::cerr << r.to_json(true).dump() << '\n'; };
  const Checkpoint ckpt = train(cfg, cohort.train, cohort.val, cohort.vocab.hash(), opt);
  save_checkpoint(ckpt, a.out);
  m.output(a.out);
  m["best_epoch"] = ckpt.epoch;
  m["parameters"] = ckpt.params.total_parameters();
  m.write(sibling(a.out, ".manifest.json"));
  print({{"checkpoint", a.out}, {"best_epoch", ckpt.epoch}, {"initial_loss", ckpt.initial_loss},
         {"parameters", ckpt.params.total_parameters()}});
}

struct ReportArgs {
  std::string cohort, split = "test", out, scores;
  std::size_t bootstrap = 0;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

// Shared tail of eval and baseline: metrics, optional bootstrap, files.
void finish_report(MetricsReport report, const std::vector<PatientScores>& scores, const ReportArgs& a,
                   Manifest& m, json extra) {
  if (a.bootstrap > 0) {
    report.bootstrap_mean_ap = bootstrap(
        scores.size(), [&](std::span<const std::size_t> idx) { return resample_mean_ap(scores, idx); }, a.bootstrap,
        a.seed);
  }
  ensure_parent(a.out);
  const fs::path scores_path = a.scores.empty() ? sibling(a.out, ".scores.jsonl") : fs::path(a.scores);
  ensure_parent(scores_path);
  write_scores(scores_path, scores);
  json j = report.to_json();
  j["split"] = a.split;
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(a.out, j);
  m.output(a.out);
  m.output(scores_path);
  m.write(sibling(a.out, ".manifest.json"));
  print(j);
}

struct EvalArgs : ReportArgs {
  std::string ckpt;
};

void run_eval(const EvalArgs& a) {
  Manifest m("eval");
  verify_artifact(a.ckpt, sibling(a.ckpt, ".manifest.json"));
  m.input(a.ckpt);
  const Cohort cohort = load_verified_cohort(a.cohort, m);
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  m["config"] = ckpt.config.to_json();
  m["seed"] = a.seed;
  const Evaluation ev = evaluate(ckpt, cohort.split(a.split), cohort.vocab.hash(), a.threads);
  finish_report(ev.report, ev.scores, a, m, {{"model", "zimm-ed"}, {"checkpoint_epoch", ckpt.epoch}});
}

struct BaselineArgs : ReportArgs {
  std::string kind;
  std::size_t epochs = 30;
};

void run_baseline_cmd(const BaselineArgs& a) {
  Manifest m("baseline");
  const BaselineKind kind = parse_baseline_kind(a.kind);
  const Cohort cohort = load_verified_cohort(a.cohort, m);
  if (a.split != "val" && a.split != "test") throw ValidationError("baseline: --split must be val or test");
  MlpOptions mlp;
  mlp.seed = a.seed;
  mlp.epochs = a.epochs;
  m["seed"] = a.seed;
  m["kind"] = a.kind;
  BaselineResult r = run_baseline(kind, cohort, mlp);
  const auto& scores = a.split == "val" ? r.val : r.test;
  finish_report(compute_report(scores), scores, a, m, {{"model", a.kind}, {"details", r.details}});
}

struct CompareArgs {
  std::vector<std::string> scores;
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 42;
  std::string out, manifest;
};

void run_compare(const CompareArgs& a) {
  if (a.scores.size() != 2) throw ValidationError("compare: pass exactly two --scores files");
  Manifest m("compare");
  m["seed"] = a.seed;
  for (const auto& s : a.scores) m.input(s);
  Comparison c = compare_scores(read_scores(a.scores[0]), read_scores(a.scores[1]), a.bootstrap, a.seed);
  c.name_a = a.scores[0];
  c.name_b = a.scores[1];
  const json j = c.to_json();
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_json(a.out, j);
    m.output(a.out);
  }
  const std::string manifest = !a.manifest.empty() ? a.manifest : a.out.empty() ? "" : sibling(a.out, ".manifest.json").string();
  if (!manifest.empty()) m.write(manifest);
  print(j);
}

int run_gradcheck(bool tiny, std::uint64_t seed, const std::string& manifest_path) {
  Manifest m("gradcheck");
  ModelConfig cfg = tiny_config();
  std::size_t patients = 2, days = 3;
  if (!tiny) {
    cfg.embedding.code_dim = 6;
    cfg.aggregation.heads = 3;
    cfg.encoder.units = 3;
    cfg.decoder.units = 3;
    cfg.preprocessing.buckets = 4;
    patients = 3;
    days = 4;
  }
  m["config"] = cfg.to_json();
  m["seed"] = seed;
  const GradCheckResult r = end_to_end_gradcheck(cfg, random_entries(cfg, patients, days, seed), seed);
  const json j{{"coordinates", r.coordinates},
               {"max_relative_error", r.max_relative_error},
               {"worst_parameter", r.worst_parameter},
               {"worst_index", r.worst_index},
               {"tolerance", kGradTolerance},
               {"pass", r.max_relative_error < kGradTolerance}};
  m["result"] = j;
  if (!manifest_path.empty()) m.write(manifest_path);
  print(j);
  return r.max_relative_error < kGradTolerance ? 0 : 1;
}

void run_params(const std::string& config, const std::string& manifest_path) {
  Manifest m("params");
  const ModelConfig cfg = config_or_default(config);
  if (!config.empty()) m.input(config);
  const ZimmModel model(cfg);
  const std::size_t closed_form = model.parameter_count();
  const std::size_t counted = model.init_params(cfg.training.seed).total_parameters();
  if (closed_form != counted) {
    throw std::logic_error("parameter count formula " + std::to_string(closed_form) + " != initialized " +
                           std::to_string(counted));
  }
  m["config"] = cfg.to_json();
  m["parameters"] = counted;
  if (!manifest_path.empty()) m.write(manifest_path);
  std::cout << counted << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ZiMM encoder-decoder: data pipeline, training, evaluation and statistics"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic cohort (events, patients, latent classes)");
  generate->add_option("--patients", gen.patients, "Patient count")->default_val(10000);
  generate->add_option("--seed", gen.seed, "Generator seed")->default_val(42);
  generate->add_option("--out", gen.out, "Output directory")->required();

  CohortArgs coh;
  std::uint64_t cohort_seed = 0;
  auto* cohort = app.add_subcommand("cohort", "Build the cohort cache from event files");
  cohort->add_option("--events", coh.events, "Events JSON lines")->required();
  cohort->add_option("--patients", coh.patients, "Patients JSON lines")->required();
  cohort->add_option("--config", coh.config, "Model config (preprocessing section used)");
  auto* cohort_seed_opt = cohort->add_option("--seed", cohort_seed, "Split and shuffle seed (default: training.seed)");
  cohort->add_option("--out", coh.out, "Output directory")->required();

  TrainArgs tr;
  std::size_t train_epochs = 0, train_threads = 1;
  std::uint64_t train_seed = 0;
  auto* trainc = app.add_subcommand("train", "Train ZiMM ED on a cohort");
  trainc->add_option("--cohort", tr.cohort, "Cohort directory")->required();
  trainc->add_option("--config", tr.config, "Model config");
  trainc->add_option("--out", tr.out, "Checkpoint path")->required();
  trainc->add_option("--log", tr.log, "Per-epoch log (default: <out>.log.jsonl)");
  auto* epochs_opt = trainc->add_option("--epochs", train_epochs, "Epoch budget override");
  auto* seed_opt = trainc->add_option("--seed", train_seed, "Training seed override");
  auto* threads_opt = trainc->add_option("--threads", train_threads, "Worker threads (default: ZIMM_THREADS or all cores)");

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on a cohort split");
  evalc->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  evalc->add_option("--cohort", ev.cohort, "Cohort directory")->required();
  evalc->add_option("--split", ev.split, "train, val or test")->default_val("test");
  evalc->add_option("--out", ev.out, "Report path")->required();
  evalc->add_option("--scores", ev.scores, "Scores path (default: <out>.scores.jsonl)");
  evalc->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples of mean-AP (0: none)")->default_val(0);
  evalc->add_option("--seed", ev.seed, "Bootstrap seed")->default_val(42);
  auto* eval_threads_opt = evalc->add_option("--threads", ev.threads, "Worker threads (default: ZIMM_THREADS or all cores)");

  BaselineArgs bl;
  auto* baseline = app.add_subcommand("baseline", "Train and score a baseline");
  baseline->add_option("--kind", bl.kind, "lr-sf, lr-df or mlp-sf")->required();
  baseline->add_option("--cohort", bl.cohort, "Cohort directory")->required();
  baseline->add_option("--split", bl.split, "val or test")->default_val("test");
  baseline->add_option("--out", bl.out, "Report path")->required();
  baseline->add_option("--scores", bl.scores, "Scores path (default: <out>.scores.jsonl)");
  baseline->add_option("--bootstrap", bl.bootstrap, "Bootstrap resamples of mean-AP (0: none)")->default_val(0);
  baseline->add_option("--seed", bl.seed, "Seed")->default_val(42);
  baseline->add_option("--epochs", bl.epochs, "MLP epochs")->default_val(30);

  CompareArgs cmp;
  auto* compare = app.add_subcommand("compare", "Bootstrap mean-AP of two score files and test the difference");
  compare->add_option("--scores", cmp.scores, "Two score files")->required();
  compare->add_option("--bootstrap", cmp.bootstrap, "Resamples")->default_val(1000);
  compare->add_option("--seed", cmp.seed, "Seed")->default_val(42);
  compare->add_option("--out", cmp.out, "Comparison report path");
  compare->add_option("--manifest", cmp.manifest, "Manifest path (default: <out>.manifest.json)");

  bool tiny = false;
  std::uint64_t gc_seed = 7;
  std::string gc_manifest;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the end-to-end gradient");
  gradcheck->add_flag("--tiny", tiny, "Smallest model");
  gradcheck->add_option("--seed", gc_seed, "Seed")->default_val(7);
  gradcheck->add_option("--manifest", gc_manifest, "Manifest path");

  std::string params_config, params_manifest;
  auto* params = app.add_subcommand("params", "Print the trainable-parameter count");
  params->add_option("--config", params_config, "Model config (default: built-in defaults)");
  params->add_option("--manifest", params_manifest, "Manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) run_generate(gen);
    if (*cohort) {
      if (*cohort_seed_opt) coh.seed = cohort_seed;
      run_cohort(coh);
    }
    if (*trainc) {
      if (*epochs_opt) tr.epochs = train_epochs;
      if (*seed_opt) tr.seed = train_seed;
      if (*threads_opt) tr.threads = train_threads;
      run_train(tr);
    }
    if (*evalc) {
      if (!*eval_threads_opt) ev.threads = default_threads();
      run_eval(ev);
    }
    if (*baseline) run_baseline_cmd(bl);
    if (*compare) run_compare(cmp);
    if (*gradcheck) return run_gradcheck(tiny, gc_seed, gc_manifest);
    if (*params) run_params(params_config, params_manifest);
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
