#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "posfuse/dataset.hpp"

using namespace posfuse;

namespace {

Environment small_env(std::uint64_t seed) {
  Environment env = make_desk_environment(seed);
  env.n_subcarriers = 8;
  for (auto& a : env.anchors) a.n_antennas = 2;
  return env;
}

}  // namespace

TEST_CASE("default split carves 90/10 train/val") {
  SplitSpec s = SplitSpec::from_total(100);
  CHECK(s.n_train == 90);
  CHECK(s.n_val == 10);
  CHECK(s.n_test == 0);
  SplitSpec t = SplitSpec::from_total(100, 0.2);
  CHECK(t.n_test == 20);
  CHECK(t.n_train + t.n_val == 80);
}

TEST_CASE("generation is deterministic byte for byte") {
  Environment env = small_env(21);
  Dataset a = gen_dataset(env, SplitSpec::counts(30, 3, 8), ScenarioSpec::static_scenario());
  Dataset b = gen_dataset(env, SplitSpec::counts(30, 3, 8), ScenarioSpec::static_scenario());
  CHECK(a.serialize() == b.serialize());
}

TEST_CASE("dynamic scenario only perturbs the named anchors' test fingerprints") {
  Environment env = small_env(22);
  SplitSpec split = SplitSpec::counts(30, 3, 10);
  Dataset st = gen_dataset(env, split, ScenarioSpec::static_scenario());
  Dataset dyn = gen_dataset(env, split, ScenarioSpec::dynamic({0}));

  for (auto i : st.train_idx)
    for (std::uint32_t a = 0; a < st.n_anchors; ++a)
      CHECK(st.samples[i].fingerprints[a].data == dyn.samples[i].fingerprints[a].data);
  for (auto i : st.val_idx)
    for (std::uint32_t a = 0; a < st.n_anchors; ++a)
      CHECK(st.samples[i].fingerprints[a].data == dyn.samples[i].fingerprints[a].data);

  std::size_t changed = 0;
  for (auto i : st.test_idx) {
    if (st.samples[i].fingerprints[0].data != dyn.samples[i].fingerprints[0].data) ++changed;
    for (std::uint32_t a = 1; a < st.n_anchors; ++a)
      CHECK(st.samples[i].fingerprints[a].data == dyn.samples[i].fingerprints[a].data);
    CHECK(dyn.samples[i].scenario_tag == 0x01);
    CHECK(st.samples[i].scenario_tag == 0);
  }
  CHECK(changed == st.test_idx.size());
}

TEST_CASE("scenario parsing accepts labels and indices, rejects unknown anchors") {
  Environment env = small_env(23);
  ScenarioSpec by_label = ScenarioSpec::parse("dynamic:A,C", env);
  CHECK(by_label.changed_anchors == std::set<std::uint32_t>{0, 2});
  ScenarioSpec by_index = ScenarioSpec::parse("dynamic:0,2", env);
  CHECK(by_index.changed_anchors == by_label.changed_anchors);
  CHECK(ScenarioSpec::parse("static", env).is_static());
  CHECK_THROWS_AS(ScenarioSpec::parse("dynamic:Z", env), ConfigError);
  CHECK_THROWS_AS(ScenarioSpec::parse("dynamic:", env), ConfigError);
  CHECK_THROWS_AS(gen_dataset(env, SplitSpec::counts(30, 3, 8), ScenarioSpec::dynamic({9})),
                  ConfigError);
}

TEST_CASE("tiny datasets are rejected") {
  Environment env = small_env(24);
  CHECK_THROWS_AS(gen_dataset(env, SplitSpec::counts(4, 1, 2), ScenarioSpec::static_scenario()),
                  DomainError);
}

TEST_CASE("container round trip is lossless") {
  Environment env = small_env(25);
  Dataset ds = gen_dataset(env, SplitSpec::counts(20, 2, 6), ScenarioSpec::dynamic({1, 3}));
  auto path = std::filesystem::temp_directory_path() / "posfuse_test_roundtrip.pfds";
  ds.save(path.string());
  Dataset back = Dataset::load(path.string());
  CHECK(back.serialize() == ds.serialize());
  CHECK(back.content_hash() == ds.content_hash());
  CHECK(back.n_anchors == ds.n_anchors);
  CHECK(back.test_idx == ds.test_idx);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt containers are rejected") {
  Environment env = small_env(26);
  Dataset ds = gen_dataset(env, SplitSpec::counts(18, 2, 4), ScenarioSpec::static_scenario());
  auto bytes = ds.serialize();
  bytes[0] = std::byte{'X'};
  CHECK_THROWS_AS(Dataset::deserialize(bytes), DataError);
  auto truncated = ds.serialize();
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(Dataset::deserialize(truncated), DataError);
}

TEST_CASE("split invariants are validated") {
  Environment env = small_env(27);
  Dataset ds = gen_dataset(env, SplitSpec::counts(18, 2, 4), ScenarioSpec::static_scenario());
  Dataset broken = ds;
  broken.val_idx[0] = broken.train_idx[0];  // overlap
  CHECK_THROWS_AS(broken.validate(), DataError);
  broken = ds;
  broken.val_idx.clear();
  CHECK_THROWS_AS(broken.validate(), DataError);
  broken = ds;
  broken.test_idx.push_back(10000);
  CHECK_THROWS_AS(broken.validate(), DataError);
}

TEST_CASE("all emitted fingerprints stay in the unit range") {
  Environment env = small_env(28);
  // the attenuated test split exercises clamping against train extrema
  Dataset ds = gen_dataset(env, SplitSpec::counts(30, 3, 12), ScenarioSpec::dynamic({0, 1, 2, 3}));
  for (const auto& s : ds.samples)
    for (const auto& fp : s.fingerprints)
      for (float v : fp.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
}
