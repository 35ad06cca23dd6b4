#include <gtest/gtest.h>

#include <filesystem>

#include "aglab/config.hpp"
#include "test_util.hpp"

namespace {

using aglab::AnalyticBackend;
using aglab::Condition;
using aglab::ExperimentConfig;
using aglab::FixedPolicyController;
using aglab::GenerateOptions;
using aglab::GmmSpec;
using aglab::Json;
using aglab::MlpScoreNet;
using aglab::NoiseSchedule;
using aglab::ScheduleKind;

TEST(GmmIo, RoundTripPreservesEvaluation) {
  GmmSpec spec = GmmSpec::default_two_class();
  GmmSpec back = aglab::gmm_from_json(aglab::gmm_to_json(spec));
  EXPECT_EQ(back.dim, spec.dim);
  EXPECT_EQ(back.priors, spec.priors);
  ASSERT_EQ(back.classes.size(), spec.classes.size());
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    ASSERT_EQ(back.classes[c].comps.size(), spec.classes[c].comps.size());
    for (std::size_t k = 0; k < spec.classes[c].comps.size(); ++k) {
      EXPECT_EQ(back.classes[c].comps[k].mean, spec.classes[c].comps[k].mean);
      EXPECT_EQ(back.classes[c].comps[k].var, spec.classes[c].comps[k].var);
    }
  }
}

TEST(GmmIo, MissingFieldNamed) {
  Json j = aglab::gmm_to_json(GmmSpec::default_two_class());
  j.erase("priors");
  try {
    aglab::gmm_from_json(j);
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("priors"), std::string::npos);
  }
}

TEST(CheckpointIo, RoundTripReproducesForward) {
  MlpScoreNet net(2, 2, /*seed=*/7, /*hidden=*/24, /*time_dim=*/8, /*emb_dim=*/4);
  MlpScoreNet back = aglab::checkpoint_from_json(aglab::checkpoint_to_json(net));
  aglab::Tensor x = aglab::Tensor::vec({0.3, -1.2});
  auto a = net.forward(aglab::reshape(x, {1, 2}), {5}, {net.cond_row(Condition::of(1))}, 20);
  auto b = back.forward(aglab::reshape(x, {1, 2}), {5}, {back.cond_row(Condition::of(1))}, 20);
  EXPECT_EQ(a.values(), b.values());
}

TEST(CheckpointIo, WrongShapeAndMissingParamRejected) {
  MlpScoreNet net(2, 2, 7, 24, 8, 4);
  Json j = aglab::checkpoint_to_json(net);
  Json broken = j;
  broken["params"].erase("w2");
  EXPECT_THROW(aglab::checkpoint_from_json(broken), std::invalid_argument);
  Json wrong = j;
  wrong["params"]["b1"]["data"].push_back(0.0);
  EXPECT_THROW(aglab::checkpoint_from_json(wrong), std::invalid_argument);
}

TEST(TrajectoryIo, RoundTripAndVersionTag) {
  GmmSpec spec = GmmSpec::default_two_class();
  NoiseSchedule sched = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  AnalyticBackend backend(spec, sched);
  FixedPolicyController ctrl(aglab::make_truncated_cfg(20, 6, 7.5));
  GenerateOptions opts;
  opts.cond = Condition::of(1);
  auto run = aglab::generate(backend, ctrl, 12345, opts);

  std::string text = aglab::trajectory_to_jsonl(run.record);
  // every line carries the schema version
  std::istringstream in(text);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find("\"v\":1"), std::string::npos);
    ++lines;
  }
  EXPECT_EQ(lines, 22u);  // run header + 20 steps + endpoint

  auto back = aglab::trajectory_from_jsonl(text);
  EXPECT_EQ(back.seed, run.record.seed);
  EXPECT_EQ(back.T, run.record.T);
  EXPECT_EQ(back.x0, run.record.x0);
  EXPECT_EQ(back.total_nfe, run.record.total_nfe);
  ASSERT_EQ(back.steps.size(), run.record.steps.size());
  for (std::size_t i = 0; i < back.steps.size(); ++i) {
    EXPECT_EQ(back.steps[i].t, run.record.steps[i].t);
    EXPECT_EQ(back.steps[i].x, run.record.steps[i].x);
    EXPECT_EQ(back.steps[i].eps_bar, run.record.steps[i].eps_bar);
    EXPECT_EQ(back.steps[i].eps_uncond.has_value(), run.record.steps[i].eps_uncond.has_value());
    EXPECT_EQ(back.steps[i].gamma.has_value(), run.record.steps[i].gamma.has_value());
    if (back.steps[i].gamma) {
      EXPECT_EQ(*back.steps[i].gamma, *run.record.steps[i].gamma);
    }
    EXPECT_EQ(back.steps[i].nfe_after, run.record.steps[i].nfe_after);
    EXPECT_EQ(back.steps[i].choice, run.record.steps[i].choice);
  }

  EXPECT_THROW(aglab::trajectory_from_jsonl("{\"v\":1,\"kind\":\"run\",\"seed\":0,\"T\":2}\n"),
               std::invalid_argument);
}

TEST(PolicyIo, RoundTripAndRejects) {
  aglab::Policy p = aglab::make_naive_interleave(6, 7.5);
  auto back = aglab::policy_from_json(aglab::policy_to_json(p));
  ASSERT_EQ(back.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_TRUE(back[i] == p[i]);
  EXPECT_THROW(aglab::policy_from_json(Json::parse("{\"a\":1}")), std::invalid_argument);
  EXPECT_THROW(aglab::policy_from_json(Json::parse("[\"cfg\"]")), std::invalid_argument);
}

TEST(CoeffsIo, RoundTrip) {
  GmmSpec spec = GmmSpec::default_two_class();
  NoiseSchedule sched = NoiseSchedule::make(ScheduleKind::Cosine, 8);
  AnalyticBackend backend(spec, sched);
  auto ds = aglab::collect_paths(backend, 7.5, 24, 3);
  auto coeffs = aglab::fit_linear(ds);
  auto back = aglab::coeffs_from_json(aglab::coeffs_to_json(coeffs));
  EXPECT_EQ(back.T, coeffs.T);
  EXPECT_EQ(back.dim, coeffs.dim);
  EXPECT_EQ(back.window, coeffs.window);
  ASSERT_EQ(back.rows.size(), coeffs.rows.size());
  for (const auto& [t, row] : coeffs.rows) {
    EXPECT_EQ(back.rows.at(t).beta_c, row.beta_c);
    EXPECT_EQ(back.rows.at(t).beta_u, row.beta_u);
  }
}

TEST(CoeffsIo, WrongRowWidthRejected) {
  Json j;
  j["meta"] = Json{{"v", 1}, {"T", 8}, {"dim", 2}, {"window", 0}};
  j["3"] = Json{{"beta_c", {0.1, 0.2}}, {"beta_u", {0.3}}};  // needs 6 cond + 5 uncond
  EXPECT_THROW(aglab::coeffs_from_json(j), std::invalid_argument);
}

TEST(AlphasIo, RoundTripWithChoices) {
  aglab::ChoiceSet choices;
  auto alpha = aglab::AlphaMatrix::init_uniform(5, choices.num_options(), 99);
  Json j = aglab::alphas_to_json(alpha, choices);
  aglab::ChoiceSet back_choices;
  auto back = aglab::alphas_from_json(j, &back_choices);
  EXPECT_EQ(back_choices.strengths, choices.strengths);
  ASSERT_EQ(back.rows.size(), alpha.rows.size());
  for (std::size_t i = 0; i < alpha.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].values(), alpha.rows[i].values());
  }
}

TEST(PathsIo, RoundTrip) {
  GmmSpec spec = GmmSpec::default_two_class();
  NoiseSchedule sched = NoiseSchedule::make(ScheduleKind::Cosine, 6);
  AnalyticBackend backend(spec, sched);
  auto ds = aglab::collect_paths(backend, 7.5, 5, 11);
  auto back = aglab::paths_from_jsonl(aglab::paths_to_jsonl(ds));
  EXPECT_EQ(back.T, ds.T);
  EXPECT_EQ(back.dim, ds.dim);
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].seed, ds.trajectories[i].seed);
    EXPECT_TRUE(back.trajectories[i].cond == ds.trajectories[i].cond);
    ASSERT_EQ(back.trajectories[i].steps.size(), ds.trajectories[i].steps.size());
    for (std::size_t s = 0; s < ds.trajectories[i].steps.size(); ++s) {
      EXPECT_EQ(back.trajectories[i].steps[s].eps_cond, ds.trajectories[i].steps[s].eps_cond);
      EXPECT_EQ(back.trajectories[i].steps[s].eps_uncond, ds.trajectories[i].steps[s].eps_uncond);
    }
  }
}

TEST(FileIo, MissingFileIsDistinctError) {
  EXPECT_THROW(aglab::read_text_file("/nonexistent/path/x.json"), aglab::MissingArtifactError);
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "aglab_io_test";
  std::filesystem::remove_all(dir);
  std::string p = (dir / "a" / "b.txt").string();
  aglab::write_text_file(p, "hello");
  EXPECT_EQ(aglab::read_text_file(p), "hello");
  std::filesystem::remove_all(dir);
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  ExperimentConfig c;
  c.validate();
  auto back = aglab::config_from_json(aglab::config_to_json(c));
  EXPECT_EQ(aglab::config_to_json(back).dump(), aglab::config_to_json(c).dump());
}

TEST(Config, SeedRangeSyntax) {
  EXPECT_EQ(aglab::parse_seed_range("7"), (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(aglab::parse_seed_range("0..3"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
  EXPECT_THROW(aglab::parse_seed_range("3..0"), std::invalid_argument);
  EXPECT_THROW(aglab::parse_seed_range("a..b"), std::invalid_argument);
  EXPECT_THROW(aglab::parse_seed_range(""), std::invalid_argument);

  Json j = Json::parse(R"({"v":1,"seeds":"2..4"})");
  EXPECT_EQ(aglab::config_from_json(j).seeds, (std::vector<std::uint64_t>{2, 3, 4}));
}

TEST(Config, UnknownAndIllTypedFieldsNamed) {
  try {
    aglab::config_from_json(Json::parse(R"({"v":1,"strenght":7.5})"));
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("strenght"), std::string::npos);
  }
  try {
    aglab::config_from_json(Json::parse(R"({"v":1,"T":"twenty"})"));
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("\"T\""), std::string::npos);
  }
  EXPECT_THROW(aglab::config_from_json(Json::parse(R"({"T":20})")), std::invalid_argument);
}

TEST(Config, ValidationNamesField) {
  ExperimentConfig c;
  c.backend = "mlp";
  try {
    c.validate();
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint"), std::string::npos);
  }
  ExperimentConfig d;
  d.p_uncond = 1.5;
  EXPECT_THROW(d.validate(), std::invalid_argument);
}

}  // namespace
