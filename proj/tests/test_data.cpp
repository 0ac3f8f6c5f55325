#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "estkit/data/dataset.hpp"

using namespace estkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("estkit_test_data_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Dataset, DefaultShapeAndSplit) {
  const auto ds = generate_dataset(make_system("selkov"), 100, 200, 7);
  ASSERT_EQ(ds.trajectories.size(), 100u);
  EXPECT_EQ(ds.trajectories[0].states.rows(), 200);
  EXPECT_EQ(ds.trajectories[0].states.cols() + ds.trajectories[0].observations.cols(), 4);
  EXPECT_EQ(ds.subset(Split::train).size(), 70u);
  EXPECT_EQ(ds.subset(Split::val).size(), 10u);
  EXPECT_EQ(ds.subset(Split::test).size(), 20u);
  std::size_t max_train = 0, min_val = 1000, max_val = 0, min_test = 1000;
  for (std::size_t i = 0; i < ds.split.size(); ++i) {
    if (ds.split[i] == Split::train) max_train = std::max(max_train, i);
    if (ds.split[i] == Split::val) min_val = std::min(min_val, i), max_val = std::max(max_val, i);
    if (ds.split[i] == Split::test) min_test = std::min(min_test, i);
  }
  EXPECT_LT(max_train, min_val);
  EXPECT_LT(max_val, min_test);
}

TEST(Dataset, SmallestSplit) {
  const auto ds = generate_dataset(make_system("hopf"), 10, 20, 1);
  EXPECT_EQ(ds.subset(Split::train).size(), 7u);
  EXPECT_EQ(ds.subset(Split::val).size(), 1u);
  EXPECT_EQ(ds.subset(Split::test).size(), 2u);
  EXPECT_THROW(generate_dataset(make_system("hopf"), 9, 20, 1), ConfigError);
}

TEST(Dataset, TrajectorySeedsAreDerived) {
  const auto sys = make_system("hopf");
  const auto ds = generate_dataset(sys, 12, 30, 5);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(ds.trajectories[i].seed, split_seed(5, i));
  const auto again = generate_dataset(sys, 12, 30, 5);
  EXPECT_EQ(ds.trajectories[3].observations, again.trajectories[3].observations);
}

TEST(Dataset, StatsUseTrainSplitOnly) {
  auto ds = generate_dataset(make_system("selkov"), 20, 50, 3);
  const ChannelStats before = ds.state_stats;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i)
    if (ds.split[i] == Split::test) ds.trajectories[i].states.array() += 100.0;
  recompute_stats(ds);
  EXPECT_EQ(ds.state_stats.mean, before.mean);
  EXPECT_EQ(ds.state_stats.std, before.std);

  double sum = 0.0, n = 0.0;
  for (const auto* t : ds.subset(Split::train)) sum += t->states.col(0).sum(), n += t->states.rows();
  EXPECT_NEAR(ds.state_stats.mean[0], sum / n, 1e-12);
}

TEST(Dataset, MismatchPreservesStatesAndScalesNoise) {
  const auto ds = generate_dataset(make_system("selkov"), 20, 200, 11);
  const auto same = apply_mismatch(ds, 1.0, ds.master_seed);
  const auto big = apply_mismatch(ds, 100.0, 99);
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(big.trajectories[i].states, ds.trajectories[i].states);
    EXPECT_EQ(same.trajectories[i].observations, ds.trajectories[i].observations);
  }
  EXPECT_EQ(big.split, ds.split);
  EXPECT_DOUBLE_EQ(big.ocer, 100.0);

  double base = 0.0, scaled = 0.0, n = 0.0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    base += (ds.trajectories[i].observations - ds.trajectories[i].states).squaredNorm();
    scaled += (big.trajectories[i].observations - big.trajectories[i].states).squaredNorm();
    n += static_cast<double>(ds.trajectories[i].states.size());
  }
  EXPECT_NEAR(base / n, 1.0, 0.05);
  EXPECT_NEAR(scaled / base, 100.0, 6.0);
  EXPECT_THROW(apply_mismatch(ds, 0.5, 0), ConfigError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  const auto ds = apply_mismatch(generate_dataset(make_system("pendulum"), 10, 40, 2), 25.0, 4);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.system_name, "pendulum");
  EXPECT_EQ(back.system_params, ds.system_params);
  EXPECT_EQ(back.split, ds.split);
  EXPECT_EQ(back.master_seed, 2u);
  EXPECT_EQ(back.noise_seed, 4u);
  EXPECT_EQ(back.ocer, 25.0);
  EXPECT_EQ(back.state_stats.mean, ds.state_stats.mean);
  EXPECT_EQ(back.state_stats.std, ds.state_stats.std);
  EXPECT_EQ(back.obs_stats.std, ds.obs_stats.std);
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].states, ds.trajectories[i].states);
    EXPECT_EQ(back.trajectories[i].observations, ds.trajectories[i].observations);
    EXPECT_EQ(back.trajectories[i].seed, ds.trajectories[i].seed);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ByteIdenticalUnderFixedSeed) {
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  save_dataset(generate_dataset(make_system("lorenz96"), 10, 30, 9), a);
  save_dataset(generate_dataset(make_system("lorenz96"), 10, 30, 9), b);
  for (const auto& entry : fs::directory_iterator(a))
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path().filename();
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, TruncatedFileNamesTheFile) {
  const auto dir = scratch_dir("truncated");
  save_dataset(generate_dataset(make_system("hopf"), 10, 20, 0), dir);
  fs::resize_file(dir / "traj_0003_obs.f64", 40);
  try {
    load_dataset(dir);
    FAIL() << "expected checksum error";
  } catch (const ChecksumError& e) {
    EXPECT_NE(std::string(e.what()).find("traj_0003_obs.f64"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, CorruptedByteIsDetected) {
  const auto dir = scratch_dir("corrupt");
  save_dataset(generate_dataset(make_system("hopf"), 10, 20, 0), dir);
  {
    std::fstream f(dir / "traj_0001_states.f64", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    f.put('\x7f');
  }
  EXPECT_THROW(load_dataset(dir), ChecksumError);
  fs::remove_all(dir);
}

TEST(Dataset, NewerVersionIsRejected) {
  const auto dir = scratch_dir("version");
  save_dataset(generate_dataset(make_system("hopf"), 10, 20, 0), dir);
  auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  m["version"] = kDatasetFormatVersion + 1;
  std::ofstream(dir / "manifest.json") << m.dump();
  EXPECT_THROW(load_dataset(dir), UnsupportedVersionError);
  fs::remove_all(dir);
}

TEST(Dataset, MissingDirectoryNamesExpectedLocation) {
  try {
    load_dataset("/nonexistent/estkit");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
}
