#include "commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ostream>
#include <sstream>

#include "vamp/checkpoint.hpp"
#include "vamp/config.hpp"
#include "vamp/container.hpp"
#include "vamp/diagnostics.hpp"
#include "vamp/pipeline.hpp"

namespace vamp::cli {

namespace {

std::size_t resolve_threads(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("VAMP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0) throw ConfigError(std::string("VAMP_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

RunConfig read_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::from_text(read_file(path));
}

std::string config_comment(const RunConfig& rc) { return "# config: " + rc.to_json().dump() + "\n"; }

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file(path, text);
  }
}

Json eval_json(const EvalResult& r) {
  Json per = Json::object();
  for (const auto& [c, acc] : r.per_class) per[std::to_string(c)] = acc;
  return Json{{"accuracy", r.accuracy}, {"count", r.count}, {"per_class", per}};
}

std::vector<std::size_t> parse_layers(const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--layers expects comma-separated layer indices, got '" + text + "'");
    }
  }
  return out;
}

struct TrainArgs {
  std::string config, data, out, metrics;
  std::size_t threads = 0;
};

int cmd_datagen(const std::string& spec_path, const std::string& out_path, std::ostream& out) {
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    Json j = parse_json_text(read_file(spec_path));
    spec = synthetic_spec_from_json(j.is_object() && j.contains("data") && j.size() == 1 ? j.at("data") : j);
  }
  const Dataset d = make_dataset(spec);
  save_dataset(d, out_path);
  out << "wrote " << out_path << "\n";
  out << "base_train " << d.base_train.size() << "\n";
  out << "base_test " << d.base_test.size() << "\n";
  out << "novel_test " << d.novel_test.size() << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = read_run_config(a.config);
  const Dataset d = load_dataset(a.data);
  rc.data = d.task.spec;
  rc.train.threads = resolve_threads(a.threads);
  BuildOptions build;
  build.encoder_seed = rc.train.encoder_seed;
  build.init_seed = rc.train.seed;
  const auto start = std::chrono::steady_clock::now();
  ModelBundle model = build_model(rc.encoder, d.task, rc.train.mode, build);
  TrainResult result = train(rc.train, d, model);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Checkpoint ck{rc, model, result.prototypes, {rc.train.seed, rc.train.epochs}};
  save_checkpoint(ck, a.out);
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  write_file(metrics, config_comment(rc) + history_csv(result.history));
  // Wall-clock time stays out of result files.
  write_file(a.out + ".log", "train_seconds " + std::to_string(seconds) + "\n");

  out << "mode " << to_string(rc.train.mode) << "\n";
  out << "trainable groups:";
  for (const auto& g : model.active_groups()) out << " " << g.name << "(" << g.tensors.size() << ")";
  out << "\n";
  out << "initial_total " << result.initial_total << "\n";
  if (!result.history.empty()) out << "final_total " << result.history.back().total << "\n";
  out << "wrote " << a.out << " and " << metrics << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::size_t samples, bool samples_given,
             const std::string& split, bool prior_sampling, std::size_t threads, const std::string& out_path,
             std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset d = load_dataset(data_path);
  if (d.task.spec.total_classes() != ck.model.num_classes()) {
    throw FormatError(FormatError::Kind::kSchema, "dataset has " + std::to_string(d.task.spec.total_classes()) +
                                                      " classes but the checkpoint has " +
                                                      std::to_string(ck.model.num_classes()));
  }
  const std::size_t s = samples_given ? samples : 10;
  const PredictOptions po{s, ck.config.train.seed, prior_sampling, false};
  const std::size_t nt = resolve_threads(threads);
  Json j{{"config", ck.config.to_json()}, {"samples", s}, {"split", split}, {"prior_sampling", prior_sampling}};
  double base_acc = 0.0, novel_acc = 0.0;
  if (split == "base" || split == "both") {
    auto r = evaluate(ck.model, d.base_test, ck.model.base_class_ids(), po, nt);
    base_acc = r.accuracy;
    j["base"] = eval_json(r);
  }
  if (split == "novel" || split == "both") {
    auto r = evaluate(ck.model, d.novel_test, ck.model.novel_class_ids(), po, nt);
    novel_acc = r.accuracy;
    j["novel"] = eval_json(r);
  }
  if (split == "both") j["harmonic_mean"] = harmonic_mean(base_acc, novel_acc);
  write_text(out_path, canonical_text(j), out);
  if (!out_path.empty() && out_path != "-") out << "samples " << s << "\nwrote " << out_path << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, bool corrupt, std::ostream& out) {
  const RunConfig rc = read_run_config(config_path);
  SyntheticSpec spec = rc.data;
  const Dataset d = make_dataset(spec);
  GradcheckOptions opts;
  opts.seed = rc.train.seed;
  if (corrupt) set_gelu_backward_fault(1.5);
  GradcheckReport report;
  try {
    report = run_gradcheck(rc.encoder, d, kAllModes, opts, rc.train.encoder_seed);
  } catch (...) {
    set_gelu_backward_fault(1.0);
    throw;
  }
  set_gelu_backward_fault(1.0);
  out << report.format();
  return report.pass() ? kOk : kNumericFailure;
}

int cmd_ablate(const std::string& config_path, const std::string& data_path, std::size_t seeds,
               const std::string& modes_text, std::size_t threads, const std::string& out_path, std::ostream& out) {
  RunConfig rc = read_run_config(config_path);
  const Dataset d = data_path.empty() ? make_dataset(rc.data) : load_dataset(data_path);
  rc.data = d.task.spec;
  rc.train.threads = resolve_threads(threads);
  AblationOptions opts;
  for (std::size_t s = 0; s < seeds; ++s) opts.seeds.push_back(s);
  if (!modes_text.empty()) {
    opts.modes.clear();
    std::stringstream ss(modes_text);
    std::string m;
    while (std::getline(ss, m, ',')) opts.modes.push_back(ablation_mode_from_string(m));
  }
  const auto rows = ablate(rc.encoder, rc.train, d, opts);
  write_text(out_path, config_comment(rc) + ablation_csv(rows), out);
  for (const auto& pc : standard_comparisons(rows)) {
    if (pc.pairs == 0) continue;
    out << to_string(pc.candidate) << " >= " << to_string(pc.baseline) << " on novel accuracy in " << pc.wins << "/"
        << pc.pairs << " seeds, mean delta " << pc.mean_delta << "\n";
  }
  return kOk;
}

int cmd_dump(const std::string& ckpt_path, const std::string& data_path, const std::string& layers_text,
             const std::string& split, std::size_t limit, const std::string& out_path, const std::string& raw_path,
             std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset d = load_dataset(data_path);
  std::vector<Example> images;
  auto take = [&](const std::vector<Example>& v) { images.insert(images.end(), v.begin(), v.end()); };
  if (split == "base_train") take(d.base_train);
  else if (split == "base_test") take(d.base_test);
  else if (split == "novel_test") take(d.novel_test);
  else if (split == "test") { take(d.base_test); take(d.novel_test); }
  else throw ConfigError("unknown split '" + split + "'");
  if (limit > 0 && images.size() > limit) images.resize(limit);
  const auto layers = parse_layers(layers_text);
  const auto rows = dump_posterior(ck.model, images, layers);
  write_text(out_path, posterior_csv(rows), out);
  if (!raw_path.empty()) write_file(raw_path, raw_posterior_csv(ck.model, images, layers));
  if (!out_path.empty() && out_path != "-") out << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational multi-modal prompt learning on synthetic few-shot tasks", "vamp"};
  app.require_subcommand(1);

  std::string spec_path, dg_out;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic base/novel dataset");
  datagen->add_option("--spec", spec_path, "JSON data spec (defaults apply when omitted)");
  datagen->add_option("--out", dg_out, "Output dataset file")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train prompts on the base classes");
  train_cmd->add_option("--config", ta.config, "JSON run config");
  train_cmd->add_option("--data", ta.data, "Dataset file")->required();
  train_cmd->add_option("--out", ta.out, "Output checkpoint")->required();
  train_cmd->add_option("--metrics", ta.metrics, "Per-epoch metrics CSV (default <out>.metrics.csv)");
  train_cmd->add_option("--threads", ta.threads, "Worker threads (default VAMP_THREADS or 1)");

  std::string ev_ckpt, ev_data, ev_split = "both", ev_out;
  std::size_t ev_samples = 10, ev_threads = 0;
  bool ev_prior = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with Monte Carlo ensembling");
  eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset file")->required();
  auto* samples_opt = eval_cmd->add_option("--samples", ev_samples, "Monte Carlo draws S (default 10)");
  samples_opt->check(CLI::PositiveNumber);
  eval_cmd->add_option("--split", ev_split, "base, novel or both")->check(CLI::IsMember({"base", "novel", "both"}));
  eval_cmd->add_flag("--prior-sampling", ev_prior, "Draw prompts from N(0, I) instead of the posterior");
  eval_cmd->add_option("--threads", ev_threads, "Worker threads (default VAMP_THREADS or 1)");
  eval_cmd->add_option("--out", ev_out, "Metrics JSON path (default stdout)");

  std::string gc_config;
  bool gc_corrupt = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every trainable group");
  grad_cmd->add_option("--config", gc_config, "JSON run config");
  grad_cmd->add_flag("--corrupt-backward", gc_corrupt, "Harness self-test: break the backward pass")
      ->group("");

  std::string ab_config, ab_data, ab_out, ab_modes;
  std::size_t ab_seeds = 10, ab_threads = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate every mode over a list of seeds");
  ablate_cmd->add_option("--config", ab_config, "JSON run config");
  ablate_cmd->add_option("--data", ab_data, "Dataset file (default: generate from the config)");
  ablate_cmd->add_option("--seeds", ab_seeds, "Number of seeds, 0..n-1")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--modes", ab_modes, "Comma-separated subset of modes");
  ablate_cmd->add_option("--threads", ab_threads, "Worker threads (default VAMP_THREADS or 1)");
  ablate_cmd->add_option("--out", ab_out, "Output CSV")->required();

  std::string dp_ckpt, dp_data, dp_layers, dp_split = "test", dp_out, dp_raw;
  std::size_t dp_limit = 0;
  auto* dump_cmd = app.add_subcommand("dump-posterior", "Aggregated posterior statistics with 2-D PCA coordinates");
  dump_cmd->add_option("--ckpt", dp_ckpt, "Checkpoint file")->required();
  dump_cmd->add_option("--data", dp_data, "Dataset file")->required();
  dump_cmd->add_option("--layers", dp_layers, "Comma-separated prompted layer indices (default all)");
  dump_cmd->add_option("--split", dp_split, "base_train, base_test, novel_test or test");
  dump_cmd->add_option("--limit", dp_limit, "Keep only the first n images");
  dump_cmd->add_option("--out", dp_out, "Output CSV")->required();
  dump_cmd->add_option("--raw-out", dp_raw, "Optional per-coordinate CSV");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'vamp --help' for usage\n";
    return kUsage;
  }

  try {
    if (datagen->parsed()) return cmd_datagen(spec_path, dg_out, out);
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (eval_cmd->parsed()) {
      return cmd_eval(ev_ckpt, ev_data, ev_samples, samples_opt->count() > 0, ev_split, ev_prior, ev_threads, ev_out,
                      out);
    }
    if (grad_cmd->parsed()) return cmd_gradcheck(gc_config, gc_corrupt, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ab_config, ab_data, ab_seeds, ab_modes, ab_threads, ab_out, out);
    if (dump_cmd->parsed()) return cmd_dump(dp_ckpt, dp_data, dp_layers, dp_split, dp_limit, dp_out, dp_raw, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace vamp::cli
