#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "estkit/cli/config.hpp"

namespace fs = std::filesystem;
using namespace estkit;
using nlohmann::json;

namespace {

struct Invocation {
  std::string command;
  std::optional<fs::path> config;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, json>> flags;  // convenience flags as overrides
  fs::path out;
};

void log(const std::string& msg) { std::cerr << msg << std::endl; }

void write_snapshot(const json& cfg, const std::string& command, const fs::path& out) {
  json snap = cfg;
  snap["command"] = command;
  fs::create_directories(out);
  binio::write_file(out / "resolved_config.json", snap.dump(2) + "\n");
}

TrajectoryDataset obtain_data(const json& cfg) {
  const json& d = cfg["data"];
  const std::string dir = d["dir"].get<std::string>();
  TrajectoryDataset ds;
  if (!dir.empty()) {
    if (!fs::exists(fs::path(dir) / "manifest.json"))
      throw ConfigError("no dataset at '" + dir + "' (expected " + (fs::path(dir) / "manifest.json").string() + ")");
    ds = load_dataset(dir);
  } else {
    ds = generate_dataset(make_system(d["system"].get<std::string>()), d["n_traj"].get<std::size_t>(),
                          d["traj_len"].get<std::size_t>(), cfg["seed"].get<std::uint64_t>());
  }
  const double ocer = d["ocer"].get<double>();
  if (ocer != ds.ocer) {
    if (ds.ocer != 1.0) throw ConfigError("dataset already has ocer " + std::to_string(ds.ocer));
    ds = apply_mismatch(ds, ocer, ds.master_seed);
  }
  return ds;
}

void write_estimates(const fs::path& dir, std::size_t index, const Series& est) {
  fs::create_directories(dir);
  std::string text;
  for (Index c = 0; c < est.cols(); ++c) text += (c ? ",x" : "x") + std::to_string(c);
  text += "\n";
  char buf[40];
  for (Index t = 0; t < est.rows(); ++t) {
    for (Index c = 0; c < est.cols(); ++c) {
      std::snprintf(buf, sizeof buf, c ? ",%.17g" : "%.17g", est(t, c));
      text += buf;
    }
    text += "\n";
  }
  char name[32];
  std::snprintf(name, sizeof name, "traj_%04zu.csv", index);
  binio::write_file(dir / name, text);
}

bench::Record cli_record(const json& cfg, const std::string& system, const std::string& method,
                         const std::vector<double>& rmses, const std::vector<double>& times, Index warmup) {
  bench::Record r;
  r.system = system;
  r.method = method;
  r.variant = "split=" + cfg["data"]["split"].get<std::string>();
  r.seed = cfg["seed"].get<std::uint64_t>();
  r.rmse = bench::mean(rmses);
  r.runtime_ms_per_step = bench::median(times);
  r.n_test_traj = rmses.size();
  r.config_hash = bench::config_hash(cfg);
  r.excluded_warmup_steps = warmup;
  return r;
}

int cmd_generate(const json& cfg, const fs::path& out) {
  const TrajectoryDataset ds = obtain_data(cfg);
  save_dataset(ds, out);
  log("wrote " + std::to_string(ds.trajectories.size()) + " " + ds.system_name + " trajectories to " + out.string());
  return 0;
}

int cmd_filter(const json& cfg, const fs::path& out) {
  const TrajectoryDataset ds = obtain_data(cfg);
  const SystemModel sys = ds.system();
  const std::string method = cfg["filter"]["method"].get<std::string>();
  const FilterKind kind = parse_filter_kind(method);
  const auto split = parse_split(cfg["data"]["split"].get<std::string>());
  const bench::BenchSettings s = cli::bench_settings(cfg);
  const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
  FilterConfig fc = s.filter;
  if (s.tune_inflation) {
    // Tuning uses the dataset at its generated noise level.
    fc.inflation = bench::tune_inflation(kind, ds.ocer == 1.0 ? ds : obtain_data([&] {
      json c = cfg;
      c["data"]["ocer"] = 1.0;
      return c;
    }()), s, seed);
    log("tuned inflation " + std::to_string(fc.inflation));
  }
  std::vector<double> rm, times;
  const auto trajs = ds.subset(split);
  if (trajs.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  std::size_t k = 0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.split[i] != split) continue;
    const FilterRun run = run_filter(kind, ds.trajectories[i], sys, fc, split_seed(seed, k++));
    rm.push_back(bench::trajectory_rmse(ds.trajectories[i].states, run.estimates, bench::warmup_steps(s), s.rmse));
    times.insert(times.end(), run.step_ms.begin(), run.step_ms.end());
    write_estimates(out / "estimates", i, run.estimates);
  }
  bench::BenchmarkReport rep = bench::new_report();
  auto rec = cli_record(cfg, ds.system_name, method, rm, times, bench::warmup_steps(s));
  rec.params = {{"inflation", fc.inflation}, {"ocer", ds.ocer}};
  rep.records.push_back(rec);
  bench::emit_all(rep, out);
  log(method + " on " + ds.system_name + ": rmse " + std::to_string(rec.rmse));
  return 0;
}

int cmd_train(const json& cfg, const fs::path& out) {
  const TrajectoryDataset ds = obtain_data(cfg);
  const std::string variant = cfg["neural"]["variant"].get<std::string>();
  if (!bench::is_neural_method(variant))
    throw ConfigError("neural.variant must be llm-filter or llm-filter-o, not '" + variant + "'");
  bench::BenchSettings s = cli::bench_settings(cfg);
  s.log = log;
  s.checkpoint_dir = out;
  const auto trained = bench::train_neural(variant, ds, s.neural, cfg["seed"].get<std::uint64_t>(), s, "checkpoint");
  std::string curve = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < trained.curve.val.size(); ++e)
    curve += std::to_string(e) + "," + (e == 0 ? std::string("nan") : bench::detail::fmt_double(trained.curve.train[e - 1])) +
             "," + bench::detail::fmt_double(trained.curve.val[e]) + "\n";
  binio::write_file(out / "loss_curve.csv", curve);
  log("best epoch " + std::to_string(trained.curve.best_epoch) + ", checkpoint in " + (out / "checkpoint").string());
  return 0;
}

int cmd_estimate(const json& cfg, const fs::path& out) {
  const std::string ckpt = cfg["neural"]["checkpoint"].get<std::string>();
  if (ckpt.empty()) throw ConfigError("estimate needs neural.checkpoint (or --checkpoint)");
  if (!fs::exists(fs::path(ckpt) / "header.json"))
    throw ConfigError("no checkpoint at '" + ckpt + "' (expected " + (fs::path(ckpt) / "header.json").string() + ")");
  const auto loaded = neural::load_checkpoint<float>(ckpt);
  const TrajectoryDataset ds = obtain_data(cfg);
  const SystemModel sys = ds.system();
  const auto& mc = loaded.model->config();
  if (mc.state_dim != sys.state_dim || mc.obs_dim != sys.obs_dim)
    throw ConfigError("checkpoint expects state/observation dims " + std::to_string(mc.state_dim) + "/" +
                      std::to_string(mc.obs_dim) + ", dataset " + ds.system_name + " has " +
                      std::to_string(sys.state_dim) + "/" + std::to_string(sys.obs_dim));
  std::optional<neural::SaPContext> ctx;
  if (loaded.info.context) {
    ctx = bench::evaluation_context(ds, *loaded.info.context, cfg["seed"].get<std::uint64_t>());
    binio::write_file(out / "context.txt", ctx->instruction_text + "\n" + ctx->example_text);
  }
  const auto split = parse_split(cfg["data"]["split"].get<std::string>());
  const auto conv = bench::parse_rmse_convention(cfg["bench"]["rmse"].get<std::string>());
  std::vector<double> rm, times;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.split[i] != split) continue;
    const auto est = neural::estimate_trajectory(*loaded.model, ctx ? &ctx->token_ids : nullptr, ds.trajectories[i]);
    rm.push_back(bench::trajectory_rmse(ds.trajectories[i].states, est.states, est.warmup, conv));
    times.insert(times.end(), est.window_ms_per_step.begin(), est.window_ms_per_step.end());
    write_estimates(out / "estimates", i, est.states);
  }
  if (rm.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  bench::BenchmarkReport rep = bench::new_report();
  auto rec = cli_record(cfg, ds.system_name, loaded.info.variant, rm, times, mc.window - 1);
  rec.params = {{"trained_on", loaded.info.system}, {"ocer", ds.ocer}};
  rep.records.push_back(rec);
  bench::emit_all(rep, out);
  log(loaded.info.variant + " on " + ds.system_name + ": rmse " + std::to_string(rec.rmse));
  return 0;
}

void append(bench::BenchmarkReport& into, const bench::BenchmarkReport& from) {
  into.records.insert(into.records.end(), from.records.begin(), from.records.end());
}

int cmd_bench(const json& cfg, const fs::path& out) {
  const json& b = cfg["bench"];
  bench::BenchSettings s = cli::bench_settings(cfg);
  s.log = log;
  if (b["save_checkpoints"].get<bool>()) s.checkpoint_dir = out / "checkpoints";
  std::optional<bench::BenchmarkReport> previous;
  if (b["resume"].get<bool>() && fs::exists(out / "report.json")) {
    previous = bench::load_report(out / "report.json");
    log("resuming from " + (out / "report.json").string() + " (" + std::to_string(previous->records.size()) + " records)");
  }
  const bench::BenchmarkReport* prev = previous ? &*previous : nullptr;
  const auto systems = b["systems"].get<std::vector<std::string>>();
  const auto methods = b["methods"].get<std::vector<std::string>>();
  const auto seeds = b["seeds"].get<std::vector<std::uint64_t>>();
  const std::string suite = b["suite"].get<std::string>();
  const std::string neural_method = b["neural_method"].get<std::string>();

  bench::BenchmarkReport rep = bench::new_report();
  if (suite == "canonical") {
    rep = bench::run_canonical(systems, methods, seeds, s, prev);
  } else if (suite == "mismatch") {
    for (const auto& sys : systems)
      append(rep, bench::run_mismatch(sys, b["ocer_grid"].get<std::vector<double>>(), methods, seeds, s, prev));
  } else if (suite == "cross") {
    rep = bench::run_cross_system(b["train_system"].get<std::string>(), b["eval_system"].get<std::string>(),
                                  b["variants"].get<std::vector<std::string>>(), seeds, s, prev);
  } else if (suite == "ablation") {
    rep = bench::run_ablation_backbones(systems, b["backbones"].get<std::vector<std::string>>(), neural_method, seeds, s,
                                        prev);
  } else if (suite == "sensitivity") {
    bench::SensitivityGrid grid;
    grid.window = b["window_grid"].get<std::vector<Index>>();
    grid.segment = b["segment_grid"].get<std::vector<Index>>();
    grid.head_hidden = b["hidden_grid"].get<std::vector<Index>>();
    grid.layers = b["layers_grid"].get<std::vector<Index>>();
    for (const auto& sys : systems) {
      const auto part = bench::run_sensitivity(sys, grid, neural_method, seeds, s, prev);
      log(sys + " rmse spread across the grid: " + bench::detail::fmt_double(bench::rmse_spread(part)));
      append(rep, part);
    }
  } else {
    throw ConfigError("unknown bench.suite '" + suite + "' (expected canonical, mismatch, cross, ablation or sensitivity)");
  }
  bench::emit_all(rep, out);
  std::size_t ok = 0;
  for (const auto& r : rep.records) ok += r.ok();
  log(std::to_string(rep.records.size()) + " records (" + std::to_string(ok) + " ok) written to " + out.string());
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"estkit: state estimation with Bayes filters and sequence-model filters"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Invocation inv;
  std::optional<std::string> system, variant, method, suite, systems, methods, data_dir, checkpoint;
  std::optional<std::uint64_t> seed;
  std::string config_path, out_dir;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "Simulate a dataset and write it to the output directory"},
      {"filter", "Run a Bayes filter over a dataset split"},
      {"train", "Train a neural filter and write its checkpoint and loss curve"},
      {"estimate", "Run a trained neural filter over a dataset split"},
      {"bench", "Run a benchmark suite and write report files"}};
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", config_path, "TOML or JSON run file");
    sub->add_option("--set", inv.sets, "Dotted override, e.g. --set neural.train.epochs=3")->take_all();
    sub->add_option("-o,--out", out_dir, "Output directory (default estkit_out/" + name + ")");
    if (name != "estimate") sub->add_option("--seed", seed, "Master seed (seed)");
    sub->add_option("--data", data_dir, "Dataset directory (data.dir)");
    if (name != "bench") sub->add_option("--system", system, "System name (data.system)");
    if (name == "filter") sub->add_option("--method", method, "kf, ekf, enkf or pf (filter.method)");
    if (name == "train") sub->add_option("--variant", variant, "llm-filter or llm-filter-o (neural.variant)");
    if (name == "estimate") sub->add_option("--checkpoint", checkpoint, "Checkpoint directory (neural.checkpoint)");
    if (name == "bench") {
      sub->add_option("--suite", suite, "canonical, mismatch, cross, ablation or sensitivity (bench.suite)");
      sub->add_option("--systems", systems, "Comma-separated systems (bench.systems)");
      sub->add_option("--methods", methods, "Comma-separated methods (bench.methods)");
    }
    sub->footer("Configuration keys (defaults; override with --set key=value or a run file):\n" +
                cli::describe_keys(cli::sections_for(name)));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    inv.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) inv.config = config_path;
    if (seed) inv.flags.emplace_back("seed", *seed);
    if (system) inv.flags.emplace_back("data.system", *system);
    if (data_dir) inv.flags.emplace_back("data.dir", *data_dir);
    if (method) inv.flags.emplace_back("filter.method", *method);
    if (variant) inv.flags.emplace_back("neural.variant", *variant);
    if (checkpoint) inv.flags.emplace_back("neural.checkpoint", *checkpoint);
    if (suite) inv.flags.emplace_back("bench.suite", *suite);
    if (systems) inv.flags.emplace_back("bench.systems", split_list(*systems));
    if (methods) inv.flags.emplace_back("bench.methods", split_list(*methods));
    auto overrides = inv.flags;
    for (const auto& s : inv.sets) overrides.push_back(cli::parse_override(s));
    const json cfg = cli::resolve_config(inv.command, inv.config, overrides);
    inv.out = out_dir.empty() ? fs::path("estkit_out") / inv.command : fs::path(out_dir);
    write_snapshot(cfg, inv.command, inv.out);

    if (inv.command == "generate") return cmd_generate(cfg, inv.out);
    if (inv.command == "filter") return cmd_filter(cfg, inv.out);
    if (inv.command == "train") return cmd_train(cfg, inv.out);
    if (inv.command == "estimate") return cmd_estimate(cfg, inv.out);
    return cmd_bench(cfg, inv.out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
