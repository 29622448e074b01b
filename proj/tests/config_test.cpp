#include <gtest/gtest.h>

#include <filesystem>

#include "dap/checkpoint.hpp"
#include "dap/config.hpp"

namespace dap {
namespace {

TEST(ConfigTest, DefaultsCarryTheReferenceHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.count("prompt.k"), 10u);
  EXPECT_EQ(c.count("prompt.epochs"), 20u);
  EXPECT_EQ(c.count("prompt.batch"), 10u);
  EXPECT_EQ(c.count("label.count"), 1000u);
  EXPECT_EQ(c.count("agent.max_steps"), 20u);
  EXPECT_EQ(c.text("label.template"), "A photo of a {object}");
  EXPECT_EQ(c.counts("ablate.k"), (std::vector<std::size_t>{0, 1, 5, 10, 20}));
  EXPECT_FALSE(c.flag("head.linear"));
  EXPECT_DOUBLE_EQ(c.real("world.threshold"), 3.0);
}

TEST(ConfigTest, ParseOverridesAndIgnoresComments) {
  const RunConfig c = RunConfig::parse("# comment\n\n seed = 42 \nprompt.k=5\r\nlabel.template=the {object}\n");
  EXPECT_EQ(c.u64("seed"), 42u);
  EXPECT_EQ(c.count("prompt.k"), 5u);
  EXPECT_EQ(c.text("label.template"), "the {object}");
  EXPECT_EQ(c.count("prompt.epochs"), 20u);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::parse("prompt.kk=3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("prompt.k=-1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("prompt.k=1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("prompt.lr=fast\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("prompt.lr=nan\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("head.linear=yes\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("ablate.k=1,,2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("just words\n"), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.apply("novalue"), ConfigError);
  EXPECT_THROW(c.text("nope"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
  try {
    RunConfig::parse("seed=1\nbogus=2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ConfigTest, HashTracksEveryValue) {
  const RunConfig a;
  RunConfig b;
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.set("agent.lr", "0.002");
  EXPECT_NE(a.hash(), b.hash());
  b.set("agent.lr", "0.001");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), sha256_hex(a.canonical()).substr(0, 16));
}

TEST(ConfigTest, CanonicalFormRoundTrips) {
  RunConfig c;
  c.set("seed", "7");
  c.set("ablate.k", "0,3");
  const RunConfig back = RunConfig::parse(c.canonical());
  EXPECT_EQ(back.canonical(), c.canonical());
  std::size_t lines = 0;
  for (char ch : c.canonical()) lines += ch == '\n';
  EXPECT_EQ(lines, RunConfig::keys().size());
}

TEST(ConfigTest, LoadsFromFile) {
  const auto file = std::filesystem::temp_directory_path() / "dap_config_test.cfg";
  write_text(file, "seed=9\nworld.envs=6\n");
  const RunConfig c = RunConfig::load(file);
  EXPECT_EQ(c.u64("seed"), 9u);
  EXPECT_EQ(c.count("world.envs"), 6u);
  std::filesystem::remove(file);
}

}  // namespace
}  // namespace dap
