#include <gtest/gtest.h>

#include <fstream>

#include "estkit/cli/config.hpp"

using namespace estkit;
using namespace estkit::cli;

TEST(Toml, TablesDottedKeysAndArrays) {
  const auto doc = parse_toml(R"(
seed = 7  # comment
[data]
system = "selkov"
ocer = 1e2
[neural.backbone]
kind = 'mlp'
[bench]
seeds = [
  0, 1,
  2,
]
train.epochs = 3
flag = false
)");
  EXPECT_EQ(doc["seed"], 7);
  EXPECT_EQ(doc["data"]["system"], "selkov");
  EXPECT_DOUBLE_EQ(doc["data"]["ocer"].get<double>(), 100.0);
  EXPECT_EQ(doc["neural"]["backbone"]["kind"], "mlp");
  EXPECT_EQ(doc["bench"]["seeds"], json::array({0, 1, 2}));
  EXPECT_EQ(doc["bench"]["train"]["epochs"], 3);
  EXPECT_EQ(doc["bench"]["flag"], false);
}

TEST(Toml, ErrorsCarryOriginAndLine) {
  try {
    parse_toml("a = 1\nb = [1, 2\n", "run.toml");
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.toml:"), std::string::npos);
  }
  EXPECT_THROW(parse_toml("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("t = {x = 1}\n"), ConfigError);
  EXPECT_THROW(parse_toml("[[runs]]\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = 1 2\n"), ConfigError);
}

TEST(Config, DefaultsResolveWithoutFile) {
  const auto cfg = resolve_config("train", std::nullopt, {});
  EXPECT_EQ(cfg, default_config());
  const auto s = neural_settings(cfg);
  EXPECT_EQ(s.model.window, 40);
  EXPECT_EQ(s.model.segment, 20);
  EXPECT_EQ(s.train.batch, 16);
  EXPECT_EQ(s.train.epochs, 10);
  EXPECT_DOUBLE_EQ(s.train.optimizer.lr, 1e-4);
}

TEST(Config, OverridesAreTypedAndChecked) {
  auto cfg = resolve_config("bench", std::nullopt,
                            {parse_override("neural.window=20"), parse_override("bench.seeds=[4, 5]"),
                             parse_override("data.system=hopf"), parse_override("data.ocer=10")});
  EXPECT_EQ(cfg["neural"]["window"], 20);
  EXPECT_EQ(cfg["bench"]["seeds"], json::array({4, 5}));
  EXPECT_EQ(cfg["data"]["system"], "hopf");
  EXPECT_TRUE(cfg["data"]["ocer"].is_number_float());
  EXPECT_THROW(resolve_config("bench", std::nullopt, {parse_override("neural.windw=20")}), ConfigError);
  EXPECT_THROW(resolve_config("bench", std::nullopt, {parse_override("neural.window=1.5")}), ConfigError);
  EXPECT_THROW(resolve_config("bench", std::nullopt, {parse_override("neural.window=abc")}), ConfigError);
  EXPECT_THROW(resolve_config("bench", std::nullopt, {parse_override("neural=3")}), ConfigError);
  EXPECT_THROW(parse_override("novalue"), ConfigError);
}

TEST(Config, LaterOverridesWin) {
  const auto cfg = resolve_config("generate", std::nullopt, {parse_override("seed=1"), parse_override("seed=9")});
  EXPECT_EQ(cfg["seed"], 9);
}

TEST(Config, SnapshotRoundTripsAndCommandMustMatch) {
  const auto dir = std::filesystem::temp_directory_path() / "estkit_test_cli";
  std::filesystem::create_directories(dir);
  auto cfg = resolve_config("filter", std::nullopt, {parse_override("filter.method=pf")});
  json snap = cfg;
  snap["command"] = "filter";
  const auto path = dir / "resolved_config.json";
  {
    std::ofstream out(path);
    out << snap.dump(2);
  }
  EXPECT_EQ(resolve_config("filter", path, {}), cfg);
  EXPECT_THROW(resolve_config("train", path, {}), ConfigError);
  EXPECT_THROW(resolve_config("train", dir / "missing.toml", {}), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Config, HelpListsEveryKeyWithDefault) {
  const auto text = describe_keys(sections_for("train"));
  EXPECT_NE(text.find("neural.train.lr = 0.0001"), std::string::npos);
  EXPECT_NE(text.find("neural.context.examples = 2"), std::string::npos);
  EXPECT_NE(text.find("seed = 0"), std::string::npos);
  EXPECT_EQ(text.find("bench."), std::string::npos);
}
