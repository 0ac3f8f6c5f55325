#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "estkit/bayes/run.hpp"
#include "estkit/bench/metrics.hpp"
#include "estkit/bench/report.hpp"
#include "estkit/data/dataset.hpp"
#include "estkit/neural/checkpoint.hpp"

namespace estkit::bench {

namespace fs = std::filesystem;

struct NeuralSettings {
  neural::ModelConfig model;  // state_dim/obs_dim are filled per system
  neural::TrainConfig train;
  neural::ContextOptions context;
};

struct BenchSettings {
  std::size_t n_traj = 100;
  std::size_t traj_len = 200;
  std::uint64_t data_seed = 2024;
  std::optional<fs::path> data_dir;  // <data_dir>/<system>/manifest.json is loaded when present
  FilterConfig filter;
  std::vector<double> inflation_grid{1, 2, 5, 10, 20};
  bool tune_inflation = true;
  NeuralSettings neural;
  RmseConvention rmse = RmseConvention::per_element;
  std::optional<fs::path> checkpoint_dir;  // trained models are saved here when set
  std::function<void(const std::string&)> log;
};

inline bool is_bayes_method(const std::string& m) { return m == "kf" || m == "ekf" || m == "enkf" || m == "pf"; }
inline bool is_neural_method(const std::string& m) { return m == "llm-filter" || m == "llm-filter-o"; }

inline void check_method(const std::string& m) {
  if (!is_bayes_method(m) && !is_neural_method(m) && m != "observation")
    throw ConfigError("unknown method '" + m + "' (expected kf, ekf, enkf, pf, observation, llm-filter or llm-filter-o)");
}

// Reason a method cannot run on a system, or empty.
inline std::string not_applicable_reason(const std::string& method, const SystemModel& sys) {
  if (method == "kf" && !sys.is_linear()) return "kf needs a linear system; " + sys.name + " is nonlinear";
  if (method == "observation" && (!sys.obs_matrix || sys.obs_dim != sys.state_dim || !sys.obs_matrix->isIdentity()))
    return "observation baseline needs identity observations; " + sys.name + " observes a subset";
  return {};
}

// Warm-up steps excluded from every method's RMSE: the neural window's T - 1.
inline Index warmup_steps(const BenchSettings& s) { return s.neural.model.window - 1; }

inline nlohmann::json settings_json(const BenchSettings& s, const std::string& method) {
  nlohmann::json j = {{"n_traj", s.n_traj},
                      {"traj_len", s.traj_len},
                      {"data_seed", s.data_seed},
                      {"data_dir", s.data_dir ? s.data_dir->string() : ""},
                      {"rmse", to_string(s.rmse)},
                      {"warmup", warmup_steps(s)}};
  if (is_bayes_method(method)) {
    j["ensemble_size"] = s.filter.ensemble_size;
    j["particles"] = s.filter.particles;
    j["tune_inflation"] = s.tune_inflation;
    j["inflation"] = s.tune_inflation ? nlohmann::json(s.inflation_grid) : nlohmann::json(s.filter.inflation);
  }
  if (is_neural_method(method)) {
    j["model"] = neural::detail::model_config_json(s.neural.model);
    const auto& t = s.neural.train;
    j["train"] = {{"epochs", t.epochs},
                  {"batch", t.batch},
                  {"stride", t.stride},
                  {"lr", t.optimizer.lr},
                  {"weight_decay", t.optimizer.weight_decay},
                  {"freeze_backbone", t.freeze_backbone},
                  {"max_windows_per_epoch", t.max_windows_per_epoch},
                  {"resample_context", t.resample_context}};
    if (method == "llm-filter") j["context"] = neural::detail::context_json(s.neural.context);
  }
  return j;
}

// Loads or generates (deterministically) the dataset for a system.
inline TrajectoryDataset obtain_dataset(const std::string& system, const BenchSettings& s) {
  if (s.data_dir) {
    const fs::path dir = *s.data_dir / system;
    if (fs::exists(dir / "manifest.json")) return load_dataset(dir);
  }
  return generate_dataset(make_system(system), s.n_traj, s.traj_len, s.data_seed);
}

struct Evaluation {
  double rmse = 0.0;  // mean over trajectories of the per-trajectory RMSE
  double ms_per_step = 0.0;
  std::size_t n_traj = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline Evaluation evaluate_bayes(FilterKind kind, const TrajectoryDataset& ds, Split split, const FilterConfig& cfg,
                                 std::uint64_t seed, Index warmup, RmseConvention conv) {
  const SystemModel sys = ds.system();
  const auto trajs = ds.subset(split);
  if (trajs.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  {
    Trajectory warm;  // discarded warm-up run
    const Index n = std::min<Index>(10, trajs.front()->length());
    warm.states = trajs.front()->states.topRows(n);
    warm.observations = trajs.front()->observations.topRows(n);
    run_filter(kind, warm, sys, cfg, seed);
  }
  std::vector<double> rm, times;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const FilterRun run = run_filter(kind, *trajs[i], sys, cfg, split_seed(seed, i));
    rm.push_back(trajectory_rmse(trajs[i]->states, run.estimates, warmup, conv));
    times.insert(times.end(), run.step_ms.begin(), run.step_ms.end());
  }
  return {mean(rm), median(times), trajs.size(), {}};
}

// Picks the grid inflation with the lowest validation RMSE; failing values
// are skipped.
inline double tune_inflation(FilterKind kind, const TrajectoryDataset& ds, const BenchSettings& s, std::uint64_t seed,
                             nlohmann::json* trace = nullptr) {
  double best = std::nan(""), best_rmse = std::numeric_limits<double>::infinity();
  for (double infl : s.inflation_grid) {
    FilterConfig cfg = s.filter;
    cfg.inflation = infl;
    double r = std::nan("");
    try {
      r = evaluate_bayes(kind, ds, Split::val, cfg, split_seed(seed, 0x7E), warmup_steps(s), s.rmse).rmse;
    } catch (const FilterFailure&) {
    }
    if (trace) (*trace)[detail::fmt_double(infl)] = detail::num_or_null(r);
    if (std::isfinite(r) && r < best_rmse) best = infl, best_rmse = r;
  }
  if (std::isnan(best)) throw FilterFailure("every inflation in the grid failed on validation", 0);
  return best;
}

inline Evaluation evaluate_observation(const TrajectoryDataset& ds, Split split, Index warmup, RmseConvention conv) {
  const SystemModel sys = ds.system();
  if (!sys.obs_matrix || sys.obs_dim != sys.state_dim || !sys.obs_matrix->isIdentity())
    throw ConfigError("observation baseline needs identity observations; " + sys.name + " observes a subset");
  std::vector<double> rm;
  for (const Trajectory* tr : ds.subset(split)) rm.push_back(trajectory_rmse(tr->states, tr->observations, warmup, conv));
  return {mean(rm), 0.0, rm.size(), {}};
}

template <class S>
Evaluation evaluate_neural(const neural::NeuralFilterModel<S>& model, const std::vector<int>* ctx,
                           const TrajectoryDataset& ds, Split split, RmseConvention conv) {
  std::vector<double> rm, times;
  for (const Trajectory* tr : ds.subset(split)) {
    const auto est = neural::estimate_trajectory(model, ctx, *tr);
    rm.push_back(trajectory_rmse(tr->states, est.states, est.warmup, conv));
    times.insert(times.end(), est.window_ms_per_step.begin(), est.window_ms_per_step.end());
  }
  if (rm.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  return {mean(rm), median(times), rm.size(), {}};
}

struct TrainedNeural {
  std::unique_ptr<neural::NeuralFilterModel<float>> model;
  std::optional<neural::ContextSampler> sampler;  // training-system context source
  neural::LossCurve curve;
};

inline neural::ModelConfig model_config_for(const SystemModel& sys, const NeuralSettings& n) {
  neural::ModelConfig cfg = n.model;
  cfg.state_dim = sys.state_dim;
  cfg.obs_dim = sys.obs_dim;
  return cfg;
}

inline TrainedNeural train_neural(const std::string& method, const TrajectoryDataset& ds, const NeuralSettings& n,
                                  std::uint64_t seed, const BenchSettings& s, const std::string& tag) {
  TrainedNeural out;
  const SystemModel sys = ds.system();
  out.model = std::make_unique<neural::NeuralFilterModel<float>>(model_config_for(sys, n), split_seed(seed, 0x1A));
  if (method == "llm-filter") out.sampler.emplace(sys, ds.subset(Split::train), n.context);
  auto log_epoch = [&](int e, double tl, double vl) {
    if (s.log)
      s.log(tag + " epoch " + std::to_string(e) + " train " + detail::fmt_double(tl) + " val " + detail::fmt_double(vl));
  };
  out.curve = neural::train(*out.model, ds, out.sampler ? &*out.sampler : nullptr, n.train, split_seed(seed, 0x1B),
                            log_epoch);
  if (s.checkpoint_dir) {
    neural::CheckpointInfo info{ds.system_name, method,
                                out.sampler ? std::optional<neural::ContextOptions>(n.context) : std::nullopt,
                                {{"epochs", n.train.epochs},
                                 {"best_epoch", out.curve.best_epoch},
                                 {"train_loss", out.curve.train},
                                 {"val_loss", out.curve.val},
                                 {"seed", seed}}};
    neural::save_checkpoint(*out.model, info, *s.checkpoint_dir / tag);
  }
  return out;
}

// Context for evaluating on `eval_ds`: instruction and examples of the
// evaluation system, examples from its training split.
inline neural::SaPContext evaluation_context(const TrajectoryDataset& eval_ds, const neural::ContextOptions& opts,
                                             std::uint64_t seed) {
  return neural::ContextSampler(eval_ds.system(), eval_ds.subset(Split::train), opts).fixed(split_seed(seed, 0xE0));
}

namespace detail {

struct Cell {
  std::string system, method, variant;
  std::uint64_t seed = 0;
  nlohmann::json identity;  // everything the result depends on
  nlohmann::json params = nlohmann::json::object();

  std::string hash() const { return config_hash(identity); }
};

inline Cell make_cell(const std::string& driver, const std::string& system, const std::string& method,
                      const std::string& variant, std::uint64_t seed, const BenchSettings& s,
                      nlohmann::json extra = nlohmann::json::object()) {
  Cell c{system, method, variant, seed, {}, {}};
  c.identity = {{"driver", driver},  {"system", system}, {"method", method},
                {"variant", variant}, {"seed", seed},     {"settings", settings_json(s, method)},
                {"extra", extra}};
  return c;
}

inline Record base_record(const Cell& c, const BenchSettings& s) {
  Record r;
  r.system = c.system;
  r.method = c.method;
  r.variant = c.variant;
  r.seed = c.seed;
  r.config_hash = c.hash();
  r.excluded_warmup_steps = warmup_steps(s);
  r.params = c.params;
  return r;
}

inline Record ok_record(const Cell& c, const BenchSettings& s, const Evaluation& e) {
  Record r = base_record(c, s);
  r.rmse = e.rmse;
  r.runtime_ms_per_step = e.ms_per_step;
  r.n_test_traj = e.n_traj;
  for (const auto& [k, v] : e.extra.items()) r.params[k] = v;
  return r;
}

inline Record failed_record(const Cell& c, const BenchSettings& s, const std::string& reason) {
  Record r = base_record(c, s);
  r.status = "failed";
  r.reason = reason;
  return r;
}

// Reuses a record from `previous` with the same hash, else evaluates `fn`.
// Errors become failed records.
inline void run_cell(BenchmarkReport& rep, const BenchmarkReport* previous, const Cell& cell, const BenchSettings& s,
                     const std::function<Evaluation()>& fn) {
  if (previous) {
    if (const Record* r = previous->find(cell.hash())) {
      rep.records.push_back(*r);
      if (s.log) s.log("reuse " + cell.system + "/" + cell.method + "/" + cell.variant + " seed " + std::to_string(cell.seed));
      return;
    }
  }
  if (s.log) s.log("run " + cell.system + "/" + cell.method + "/" + cell.variant + " seed " + std::to_string(cell.seed));
  try {
    rep.records.push_back(ok_record(cell, s, fn()));
  } catch (const Error& e) {
    rep.records.push_back(failed_record(cell, s, e.what()));
    if (s.log) s.log("  failed: " + std::string(e.what()));
  }
}

inline void not_applicable(BenchmarkReport& rep, const Cell& c, const BenchSettings& s, const std::string& reason) {
  Record r = failed_record(c, s, reason);
  r.status = "not_applicable";
  rep.records.push_back(r);
}

inline bool cached(const BenchmarkReport* previous, const Cell& c) { return previous && previous->find(c.hash()); }

inline Evaluation bayes_cell(const std::string& method, const TrajectoryDataset& tuning_ds, const TrajectoryDataset& eval_ds,
                             const BenchSettings& s, std::uint64_t seed) {
  const FilterKind kind = parse_filter_kind(method);
  FilterConfig cfg = s.filter;
  nlohmann::json trace = nlohmann::json::object();
  if (s.tune_inflation) cfg.inflation = tune_inflation(kind, tuning_ds, s, seed, &trace);
  Evaluation e = evaluate_bayes(kind, eval_ds, Split::test, cfg, seed, warmup_steps(s), s.rmse);
  e.extra["inflation"] = cfg.inflation;
  if (s.tune_inflation) e.extra["inflation_validation_rmse"] = trace;
  return e;
}

}  // namespace detail

inline BenchmarkReport new_report() {
  BenchmarkReport rep;
  rep.created_at = utc_timestamp();
  return rep;
}

// Every (system, method, seed) on the test split.
inline BenchmarkReport run_canonical(const std::vector<std::string>& systems, const std::vector<std::string>& methods,
                                     const std::vector<std::uint64_t>& seeds, const BenchSettings& s,
                                     const BenchmarkReport* previous = nullptr) {
  for (const auto& m : methods) check_method(m);
  BenchmarkReport rep = new_report();
  for (const auto& system : systems) {
    std::optional<TrajectoryDataset> ds;
    auto data = [&]() -> const TrajectoryDataset& {
      if (!ds) ds = obtain_dataset(system, s);
      return *ds;
    };
    for (const auto& method : methods)
      for (std::uint64_t seed : seeds) {
        auto cell = detail::make_cell("canonical", system, method, "canonical", seed, s);
        const SystemModel sys = make_system(system);
        cell.params["state_dim"] = sys.state_dim;
        if (const auto why = not_applicable_reason(method, sys); !why.empty()) {
          detail::not_applicable(rep, cell, s, why);
          continue;
        }
        detail::run_cell(rep, previous, cell, s, [&]() -> Evaluation {
          if (is_bayes_method(method)) return detail::bayes_cell(method, data(), data(), s, seed);
          if (method == "observation") return evaluate_observation(data(), Split::test, warmup_steps(s), s.rmse);
          const std::string tag = system + "_" + method + "_seed" + std::to_string(seed);
          auto trained = train_neural(method, data(), s.neural, seed, s, tag);
          std::optional<neural::SaPContext> ctx;
          if (trained.sampler) ctx = evaluation_context(data(), s.neural.context, seed);
          Evaluation e = evaluate_neural(*trained.model, ctx ? &ctx->token_ids : nullptr, data(), Split::test, s.rmse);
          e.extra["best_epoch"] = trained.curve.best_epoch;
          if (ctx) e.extra["context_tokens"] = ctx->size();
          return e;
        });
      }
  }
  return rep;
}

// Test observations regenerated with covariance ocer * R; Bayes filters keep
// assuming R and neural filters are trained once on the original data.
inline BenchmarkReport run_mismatch(const std::string& system, const std::vector<double>& ocer_grid,
                                    const std::vector<std::string>& methods, const std::vector<std::uint64_t>& seeds,
                                    const BenchSettings& s, const BenchmarkReport* previous = nullptr) {
  for (const auto& m : methods) check_method(m);
  for (double o : ocer_grid)
    if (!(o >= 1.0)) throw ConfigError("ocer values must be >= 1");
  BenchmarkReport rep = new_report();
  const TrajectoryDataset base = obtain_dataset(system, s);
  std::map<double, TrajectoryDataset> shifted;
  auto data_at = [&](double ocer) -> const TrajectoryDataset& {
    auto it = shifted.find(ocer);
    if (it == shifted.end()) it = shifted.emplace(ocer, ocer == 1.0 ? base : apply_mismatch(base, ocer, base.master_seed)).first;
    return it->second;
  };
  for (const auto& method : methods)
    for (std::uint64_t seed : seeds) {
      std::vector<detail::Cell> cells;
      for (double ocer : ocer_grid) {
        auto cell = detail::make_cell("mismatch", system, method, "ocer=" + detail::fmt_double(ocer), seed, s,
                                      {{"ocer", ocer}});
        cell.params["ocer"] = ocer;
        cells.push_back(cell);
      }
      std::optional<TrainedNeural> trained;  // shared across the OCER sweep
      std::optional<neural::SaPContext> ctx;
      std::optional<double> inflation;  // tuned once at ocer = 1
      const std::string why = not_applicable_reason(method, base.system());
      for (std::size_t k = 0; k < cells.size(); ++k) {
        const double ocer = ocer_grid[k];
        if (!why.empty()) {
          detail::not_applicable(rep, cells[k], s, why);
          continue;
        }
        detail::run_cell(rep, previous, cells[k], s, [&]() -> Evaluation {
          const TrajectoryDataset& ds = data_at(ocer);
          if (method == "observation") return evaluate_observation(ds, Split::test, warmup_steps(s), s.rmse);
          if (is_bayes_method(method)) {
            const FilterKind kind = parse_filter_kind(method);
            FilterConfig cfg = s.filter;
            if (s.tune_inflation) {
              if (!inflation) inflation = tune_inflation(kind, base, s, seed);
              cfg.inflation = *inflation;
            }
            Evaluation e = evaluate_bayes(kind, ds, Split::test, cfg, seed, warmup_steps(s), s.rmse);
            e.extra["inflation"] = cfg.inflation;
            return e;
          }
          if (!trained) {
            trained = train_neural(method, base, s.neural, seed, s, system + "_" + method + "_seed" + std::to_string(seed));
            if (trained->sampler) ctx = evaluation_context(base, s.neural.context, seed);
          }
          Evaluation e = evaluate_neural(*trained->model, ctx ? &ctx->token_ids : nullptr, ds, Split::test, s.rmse);
          e.extra["best_epoch"] = trained->curve.best_epoch;
          return e;
        });
      }
    }
  return rep;
}

// Trains each variant on train_sys and evaluates on eval_sys; the same-system
// control is recorded alongside.
inline BenchmarkReport run_cross_system(const std::string& train_sys, const std::string& eval_sys,
                                        const std::vector<std::string>& variants,
                                        const std::vector<std::uint64_t>& seeds, const BenchSettings& s,
                                        const BenchmarkReport* previous = nullptr) {
  const SystemModel a = make_system(train_sys), b = make_system(eval_sys);
  if (a.state_dim != b.state_dim || a.obs_dim != b.obs_dim)
    throw ConfigError("cross-system pair " + train_sys + "->" + eval_sys + " differs in dimensionality (" +
                      std::to_string(a.state_dim) + "/" + std::to_string(a.obs_dim) + " vs " +
                      std::to_string(b.state_dim) + "/" + std::to_string(b.obs_dim) + ")");
  for (const auto& v : variants)
    if (!is_neural_method(v)) throw ConfigError("cross-system variants are llm-filter and llm-filter-o, not '" + v + "'");
  BenchmarkReport rep = new_report();
  std::optional<TrajectoryDataset> train_ds, eval_ds;
  for (const auto& method : variants)
    for (std::uint64_t seed : seeds) {
      const std::string pair = train_sys + "->" + eval_sys, control = train_sys + "->" + train_sys;
      auto cross = detail::make_cell("cross", eval_sys, method, pair, seed, s, {{"train_system", train_sys}});
      auto same = detail::make_cell("cross", train_sys, method, control, seed, s, {{"train_system", train_sys}});
      cross.params["train_system"] = train_sys;
      same.params["train_system"] = train_sys;
      std::optional<TrainedNeural> trained;
      auto ensure = [&] {
        if (!train_ds) train_ds = obtain_dataset(train_sys, s);
        if (!eval_ds) eval_ds = obtain_dataset(eval_sys, s);
        if (!trained)
          trained = train_neural(method, *train_ds, s.neural, seed, s, train_sys + "_" + method + "_seed" + std::to_string(seed));
      };
      for (auto* cell : {&cross, &same}) {
        const bool is_cross = cell == &cross;
        detail::run_cell(rep, previous, *cell, s, [&]() -> Evaluation {
          ensure();
          const TrajectoryDataset& target = is_cross ? *eval_ds : *train_ds;
          std::optional<neural::SaPContext> ctx;
          if (method == "llm-filter") ctx = evaluation_context(target, s.neural.context, seed);
          Evaluation e = evaluate_neural(*trained->model, ctx ? &ctx->token_ids : nullptr, target, Split::test, s.rmse);
          e.extra["best_epoch"] = trained->curve.best_epoch;
          return e;
        });
      }
    }
  return rep;
}

// Same heads and training for every backbone kind.
inline BenchmarkReport run_ablation_backbones(const std::vector<std::string>& systems,
                                              const std::vector<std::string>& backbones, const std::string& method,
                                              const std::vector<std::uint64_t>& seeds, const BenchSettings& s,
                                              const BenchmarkReport* previous = nullptr) {
  if (!is_neural_method(method)) throw ConfigError("ablation method must be llm-filter or llm-filter-o");
  BenchmarkReport rep = new_report();
  for (const auto& system : systems) {
    std::optional<TrajectoryDataset> ds;
    for (const auto& kind : backbones)
      for (std::uint64_t seed : seeds) {
        BenchSettings local = s;
        local.neural.model.backbone.kind = kind;
        auto cell = detail::make_cell("ablation", system, method, "backbone=" + kind, seed, local);
        cell.params["backbone"] = kind;
        detail::run_cell(rep, previous, cell, local, [&]() -> Evaluation {
          if (!ds) ds = obtain_dataset(system, s);
          auto trained = train_neural(method, *ds, local.neural, seed, local,
                                      system + "_" + method + "_" + kind + "_seed" + std::to_string(seed));
          std::optional<neural::SaPContext> ctx;
          if (trained.sampler) ctx = evaluation_context(*ds, local.neural.context, seed);
          return evaluate_neural(*trained.model, ctx ? &ctx->token_ids : nullptr, *ds, Split::test, local.rmse);
        });
      }
  }
  return rep;
}

struct SensitivityGrid {
  std::vector<Index> window;       // T
  std::vector<Index> segment{20, 10, 5};  // L
  std::vector<Index> head_hidden;  // embed/project width
  std::vector<Index> layers;       // backbone depth
};

// Cartesian product of the grid; empty axes keep the base setting.
inline BenchmarkReport run_sensitivity(const std::string& system, const SensitivityGrid& grid, const std::string& method,
                                       const std::vector<std::uint64_t>& seeds, const BenchSettings& s,
                                       const BenchmarkReport* previous = nullptr) {
  if (!is_neural_method(method)) throw ConfigError("sensitivity method must be llm-filter or llm-filter-o");
  auto axis = [](const std::vector<Index>& v, Index base) { return v.empty() ? std::vector<Index>{base} : v; };
  const auto& m = s.neural.model;
  BenchmarkReport rep = new_report();
  std::optional<TrajectoryDataset> ds;
  for (Index T : axis(grid.window, m.window))
    for (Index L : axis(grid.segment, m.segment))
      for (Index H : axis(grid.head_hidden, m.head_hidden))
        for (Index depth : axis(grid.layers, m.backbone.layers))
          for (std::uint64_t seed : seeds) {
            BenchSettings local = s;
            local.neural.model.window = T;
            local.neural.model.segment = L;
            local.neural.model.head_hidden = H;
            local.neural.model.backbone.layers = depth;
            const std::string variant = "T=" + std::to_string(T) + ",L=" + std::to_string(L) + ",H=" + std::to_string(H) +
                                        ",layers=" + std::to_string(depth);
            auto cell = detail::make_cell("sensitivity", system, method, variant, seed, local);
            cell.params = {{"window", T}, {"segment", L}, {"head_hidden", H}, {"layers", depth}};
            detail::run_cell(rep, previous, cell, local, [&]() -> Evaluation {
              if (!ds) ds = obtain_dataset(system, s);
              auto trained = train_neural(method, *ds, local.neural, seed, local,
                                          system + "_" + method + "_" + variant + "_seed" + std::to_string(seed));
              std::optional<neural::SaPContext> ctx;
              if (trained.sampler) ctx = evaluation_context(*ds, local.neural.context, seed);
              return evaluate_neural(*trained.model, ctx ? &ctx->token_ids : nullptr, *ds, Split::test, local.rmse);
            });
          }
  return rep;
}

// Largest minus smallest RMSE among successful records.
inline double rmse_spread(const BenchmarkReport& rep) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rep.records)
    if (r.ok()) lo = std::min(lo, r.rmse), hi = std::max(hi, r.rmse);
  return hi >= lo ? hi - lo : std::nan("");
}

}  // namespace estkit::bench
