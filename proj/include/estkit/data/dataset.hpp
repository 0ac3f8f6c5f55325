#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "estkit/core/binio.hpp"
#include "estkit/core/error.hpp"
#include "estkit/core/rng.hpp"
#include "estkit/systems/system.hpp"

namespace estkit {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct ChannelStats {
  Vec mean;
  Vec std;
};

struct TrajectoryDataset {
  std::string system_name;
  std::map<std::string, double> system_params;  // resolved make_system overrides
  std::vector<Trajectory> trajectories;
  std::vector<Split> split;
  ChannelStats state_stats;  // train split only
  ChannelStats obs_stats;    // train split only
  std::size_t traj_len = 0;
  std::uint64_t master_seed = 0;
  double ocer = 1.0;
  std::uint64_t noise_seed = 0;  // seed of the observation noise currently in place

  SystemModel system() const { return make_system(system_name, system_params); }

  std::vector<const Trajectory*> subset(Split s) const {
    std::vector<const Trajectory*> out;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
      if (split[i] == s) out.push_back(&trajectories[i]);
    return out;
  }
};

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline std::vector<Split> chronological_split(std::size_t n) {
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n / 10;
  std::vector<Split> out(n, Split::test);
  for (std::size_t i = 0; i < n; ++i) out[i] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  return out;
}

template <class Pick>
ChannelStats channel_stats(const TrajectoryDataset& ds, Pick pick) {
  Index dim = -1;
  double count = 0.0;
  Vec sum, sq;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.split[i] != Split::train) continue;
    const Series& a = pick(ds.trajectories[i]);
    if (dim < 0) {
      dim = a.cols();
      sum = Vec::Zero(dim);
      sq = Vec::Zero(dim);
    }
    sum += a.colwise().sum().transpose();
    sq += a.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(a.rows());
  }
  if (dim < 0) throw ConfigError("dataset has an empty training split");
  ChannelStats st;
  st.mean = sum / count;
  st.std = (sq / count - st.mean.cwiseProduct(st.mean)).cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-6);
  return st;
}

}  // namespace detail

inline void recompute_stats(TrajectoryDataset& ds) {
  ds.state_stats = detail::channel_stats(ds, [](const Trajectory& t) -> const Series& { return t.states; });
  ds.obs_stats = detail::channel_stats(ds, [](const Trajectory& t) -> const Series& { return t.observations; });
}

inline std::uint64_t trajectory_seed(std::uint64_t master_seed, std::size_t index) {
  return split_seed(master_seed, index);
}

// Trajectory i is simulated from seed split(master_seed, i); its initial
// state uses child stream 2 of that seed.
inline TrajectoryDataset generate_dataset(const SystemModel& sys, std::size_t n_traj = 100, std::size_t traj_len = 200,
                                          std::uint64_t master_seed = 0) {
  if (n_traj < 10) throw ConfigError("a dataset needs at least 10 trajectories for a 7:1:2 split");
  if (traj_len < 1) throw ConfigError("trajectory length must be positive");
  const auto& names = system_names();
  if (std::find(names.begin(), names.end(), sys.name) == names.end())
    throw ConfigError("datasets can only be generated for built-in systems, not '" + sys.name + "'");
  TrajectoryDataset ds;
  ds.system_name = sys.name;
  ds.system_params = sys.params;
  ds.traj_len = traj_len;
  ds.master_seed = master_seed;
  ds.noise_seed = master_seed;
  ds.split = detail::chronological_split(n_traj);
  ds.trajectories.reserve(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) {
    const std::uint64_t seed = trajectory_seed(master_seed, i);
    try {
      Rng init_rng(split_seed(seed, 2));
      const Vec x0 = sample_initial_state(sys, init_rng);
      ds.trajectories.push_back(simulate(sys, x0, traj_len, seed));
    } catch (const DivergenceError& e) {
      throw DivergenceError("trajectory " + std::to_string(i) + ": " + e.what(), e.step());
    }
  }
  recompute_stats(ds);
  return ds;
}

// Redraws only the observation noise with covariance ocer * R. Using the
// master seed as `seed` reuses the original noise draws, scaled.
inline TrajectoryDataset apply_mismatch(const TrajectoryDataset& ds, double ocer, std::uint64_t seed) {
  if (!(ocer >= 1.0)) throw ConfigError("ocer must be >= 1");
  const SystemModel sys = ds.system();
  TrajectoryDataset out = ds;
  const GaussianNoise noise(ocer * sys.obs_cov);
  for (std::size_t i = 0; i < out.trajectories.size(); ++i) {
    Trajectory& tr = out.trajectories[i];
    Rng obs_rng = Rng(trajectory_seed(seed, i)).split(1);
    for (Index t = 0; t < tr.length(); ++t) {
      const Vec x = tr.states.row(t).transpose();
      tr.observations.row(t) = (sys.observe(x) + noise.sample(obs_rng)).transpose();
    }
  }
  out.ocer = ocer;
  out.noise_seed = seed;
  recompute_stats(out);
  return out;
}

namespace detail {

inline nlohmann::json stats_json(const ChannelStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

inline ChannelStats stats_from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  return {Eigen::Map<const Vec>(m.data(), static_cast<Index>(m.size())),
          Eigen::Map<const Vec>(s.data(), static_cast<Index>(s.size()))};
}

inline nlohmann::json write_series(const std::filesystem::path& dir, const std::string& file, const Series& a) {
  const auto sum = binio::write_array<double>(dir / file, a.data(), static_cast<std::size_t>(a.size()));
  return {{"file", file}, {"rows", a.rows()}, {"cols", a.cols()}, {"fnv1a64", hex64(sum)}};
}

inline Series read_series(const std::filesystem::path& dir, const nlohmann::json& j) {
  const auto file = j.at("file").get<std::string>();
  Series a(j.at("rows").get<Index>(), j.at("cols").get<Index>());
  const auto sum = std::stoull(j.at("fnv1a64").get<std::string>(), nullptr, 16);
  binio::read_array<double>(dir / file, a.data(), static_cast<std::size_t>(a.size()), sum);
  return a;
}

}  // namespace detail

// Directory layout: manifest.json plus one little-endian float64 file per
// array (row-major).
inline void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::json m;
  m["format"] = "estkit-dataset";
  m["version"] = kDatasetFormatVersion;
  m["system"] = ds.system_name;
  m["system_params"] = ds.system_params;
  m["n_traj"] = ds.trajectories.size();
  m["traj_len"] = ds.traj_len;
  m["master_seed"] = ds.master_seed;
  m["ocer"] = ds.ocer;
  m["noise_seed"] = ds.noise_seed;
  m["state_stats"] = detail::stats_json(ds.state_stats);
  m["obs_stats"] = detail::stats_json(ds.obs_stats);
  auto& list = m["trajectories"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "traj_%04zu", i);
    const auto& tr = ds.trajectories[i];
    list.push_back({{"index", i},
                    {"seed", tr.seed},
                    {"split", to_string(ds.split[i])},
                    {"states", detail::write_series(dir, std::string(stem) + "_states.f64", tr.states)},
                    {"observations", detail::write_series(dir, std::string(stem) + "_obs.f64", tr.observations)}});
  }
  binio::write_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw IoError("no dataset at '" + dir.string() + "' (expected " + manifest_path.string() + ")");
  nlohmann::json m;
  try {
    const auto bytes = binio::read_file(manifest_path);
    m = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  try {
    if (m.value("format", "") != "estkit-dataset") throw IoError("'" + manifest_path.string() + "' is not a dataset");
    const int version = m.at("version").get<int>();
    if (version > kDatasetFormatVersion)
      throw UnsupportedVersionError("dataset format version " + std::to_string(version) +
                                    " is newer than supported version " + std::to_string(kDatasetFormatVersion));
    TrajectoryDataset ds;
    ds.system_name = m.at("system").get<std::string>();
    ds.system_params = m.at("system_params").get<std::map<std::string, double>>();
    ds.traj_len = m.at("traj_len").get<std::size_t>();
    ds.master_seed = m.at("master_seed").get<std::uint64_t>();
    ds.ocer = m.at("ocer").get<double>();
    ds.noise_seed = m.at("noise_seed").get<std::uint64_t>();
    ds.state_stats = detail::stats_from_json(m.at("state_stats"));
    ds.obs_stats = detail::stats_from_json(m.at("obs_stats"));
    const auto& list = m.at("trajectories");
    if (list.size() != m.at("n_traj").get<std::size_t>())
      throw IoError("manifest lists " + std::to_string(list.size()) + " trajectories but n_traj says otherwise");
    for (const auto& e : list) {
      Trajectory tr;
      tr.seed = e.at("seed").get<std::uint64_t>();
      tr.states = detail::read_series(dir, e.at("states"));
      tr.observations = detail::read_series(dir, e.at("observations"));
      if (tr.states.rows() != tr.observations.rows() || static_cast<std::size_t>(tr.states.rows()) != ds.traj_len)
        throw IoError("array lengths in '" + dir.string() + "' disagree with the manifest");
      ds.trajectories.push_back(std::move(tr));
      ds.split.push_back(parse_split(e.at("split").get<std::string>()));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("inconsistent manifest '" + manifest_path.string() + "': " + e.what());
  }
}

}  // namespace estkit
