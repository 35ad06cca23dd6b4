#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/io.hpp"

namespace aglab {

// "7", "0..9" (inclusive), or a JSON array of integers on the config side.
inline std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  auto fail = [&text] {
    throw std::invalid_argument("bad seed range '" + text + "' (expected: <n> or <lo>..<hi>)");
  };
  std::size_t dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(text, &pos);
      if (pos != text.size()) fail();
      return {v};
    }
    std::size_t pos = 0;
    std::uint64_t lo = std::stoull(text.substr(0, dots), &pos);
    if (pos != dots) fail();
    std::uint64_t hi = std::stoull(text.substr(dots + 2), &pos);
    if (pos != text.size() - dots - 2) fail();
    if (hi < lo) fail();
    if (hi - lo > 1000000) throw std::invalid_argument("seed range '" + text + "' is implausibly large");
    std::vector<std::uint64_t> out;
    out.reserve(hi - lo + 1);
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    fail();
  }
  return {};
}

// Everything a run depends on. Two invocations with an equal resolved config
// produce byte-identical outputs; no field draws on wall-clock entropy.
struct ExperimentConfig {
  // backend
  std::string backend = "analytic";  // analytic | mlp
  std::string gmm_path;              // empty = built-in two-class mixture
  std::string checkpoint_path;       // required by the mlp backend

  // schedule
  std::string schedule = "cosine";  // cosine | linear-beta
  int T = 20;

  // solver
  std::string solver = "ddim";  // ddim | euler

  // guidance
  double strength = 7.5;
  double gamma_bar = 1.0;
  std::vector<double> strengths{3.75, 7.5, 15.0};

  // policy search
  double lambda = 0.1;
  double cost_cap = 30.0;
  double temperature = 1.0;
  int epochs = 5;
  double search_lr = 1e-2;
  int pairs = 256;

  // network training
  int train_steps = 20000;
  int batch = 64;
  double p_uncond = 0.1;
  double train_lr = 1e-3;
  std::uint64_t train_seed = 0;

  // score-path harvesting / coefficient fitting
  int n_paths = 160;
  int window = 0;

  // evaluation
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "out";

  void validate() const {
    if (backend != "analytic" && backend != "mlp")
      throw std::invalid_argument("config field \"backend\": expected analytic|mlp, got '" + backend + "'");
    if (backend == "mlp" && checkpoint_path.empty())
      throw std::invalid_argument("config field \"checkpoint\": required when backend is mlp");
    parse_schedule_kind(schedule);  // throws with the offending value
    if (T < 2) throw std::invalid_argument("config field \"T\": must be >= 2");
    if (solver != "ddim" && solver != "euler")
      throw std::invalid_argument("config field \"solver\": expected ddim|euler, got '" + solver + "'");
    if (!(strength >= 0.0)) throw std::invalid_argument("config field \"strength\": must be >= 0");
    if (std::isnan(gamma_bar)) throw std::invalid_argument("config field \"gamma_bar\": is NaN");
    if (strengths.empty()) throw std::invalid_argument("config field \"strengths\": must not be empty");
    if (lambda < 0.0) throw std::invalid_argument("config field \"lambda\": must be >= 0");
    if (temperature <= 0.0) throw std::invalid_argument("config field \"temperature\": must be > 0");
    if (epochs < 1) throw std::invalid_argument("config field \"epochs\": must be >= 1");
    if (search_lr <= 0.0) throw std::invalid_argument("config field \"search_lr\": must be > 0");
    if (pairs < 1) throw std::invalid_argument("config field \"pairs\": must be >= 1");
    if (train_steps < 1) throw std::invalid_argument("config field \"train_steps\": must be >= 1");
    if (batch < 1) throw std::invalid_argument("config field \"batch\": must be >= 1");
    if (p_uncond < 0.0 || p_uncond > 1.0)
      throw std::invalid_argument("config field \"p_uncond\": must be in [0,1]");
    if (train_lr <= 0.0) throw std::invalid_argument("config field \"train_lr\": must be > 0");
    if (n_paths < 1) throw std::invalid_argument("config field \"n_paths\": must be >= 1");
    if (window < 0) throw std::invalid_argument("config field \"window\": must be >= 0");
    if (seeds.empty()) throw std::invalid_argument("config field \"seeds\": must not be empty");
    if (out_dir.empty()) throw std::invalid_argument("config field \"out_dir\": must not be empty");
  }

  SolverKind solver_kind() const {
    return solver == "euler" ? SolverKind::EulerOde : SolverKind::DdimEta0;
  }

  NoiseSchedule make_schedule() const { return NoiseSchedule::make(parse_schedule_kind(schedule), T); }
};

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["v"] = 1;
  j["backend"] = c.backend;
  j["gmm"] = c.gmm_path;
  j["checkpoint"] = c.checkpoint_path;
  j["schedule"] = c.schedule;
  j["T"] = c.T;
  j["solver"] = c.solver;
  j["strength"] = c.strength;
  j["gamma_bar"] = c.gamma_bar;
  j["strengths"] = c.strengths;
  j["lambda"] = c.lambda;
  j["cost_cap"] = c.cost_cap;
  j["temperature"] = c.temperature;
  j["epochs"] = c.epochs;
  j["search_lr"] = c.search_lr;
  j["pairs"] = c.pairs;
  j["train_steps"] = c.train_steps;
  j["batch"] = c.batch;
  j["p_uncond"] = c.p_uncond;
  j["train_lr"] = c.train_lr;
  j["train_seed"] = c.train_seed;
  j["n_paths"] = c.n_paths;
  j["window"] = c.window;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
  const std::string what = "config";
  if (!j.is_object()) throw std::invalid_argument(what + ": expected a JSON object");
  if (!j.contains("v")) throw std::invalid_argument(what + ": missing field \"v\"");
  if (j["v"].get<int>() != 1) throw std::invalid_argument(what + ": unsupported schema version");

  ExperimentConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = *it;
    try {
      if (k == "v") {
      } else if (k == "backend") {
        c.backend = v.get<std::string>();
      } else if (k == "gmm") {
        c.gmm_path = v.get<std::string>();
      } else if (k == "checkpoint") {
        c.checkpoint_path = v.get<std::string>();
      } else if (k == "schedule") {
        c.schedule = v.get<std::string>();
      } else if (k == "T") {
        c.T = v.get<int>();
      } else if (k == "solver") {
        c.solver = v.get<std::string>();
      } else if (k == "strength") {
        c.strength = v.get<double>();
      } else if (k == "gamma_bar") {
        c.gamma_bar = v.get<double>();
      } else if (k == "strengths") {
        c.strengths = v.get<std::vector<double>>();
      } else if (k == "lambda") {
        c.lambda = v.get<double>();
      } else if (k == "cost_cap") {
        c.cost_cap = v.get<double>();
      } else if (k == "temperature") {
        c.temperature = v.get<double>();
      } else if (k == "epochs") {
        c.epochs = v.get<int>();
      } else if (k == "search_lr") {
        c.search_lr = v.get<double>();
      } else if (k == "pairs") {
        c.pairs = v.get<int>();
      } else if (k == "train_steps") {
        c.train_steps = v.get<int>();
      } else if (k == "batch") {
        c.batch = v.get<int>();
      } else if (k == "p_uncond") {
        c.p_uncond = v.get<double>();
      } else if (k == "train_lr") {
        c.train_lr = v.get<double>();
      } else if (k == "train_seed") {
        c.train_seed = v.get<std::uint64_t>();
      } else if (k == "n_paths") {
        c.n_paths = v.get<int>();
      } else if (k == "window") {
        c.window = v.get<int>();
      } else if (k == "seeds") {
        if (v.is_string()) {
          c.seeds = parse_seed_range(v.get<std::string>());
        } else {
          c.seeds = v.get<std::vector<std::uint64_t>>();
        }
      } else if (k == "out_dir") {
        c.out_dir = v.get<std::string>();
      } else {
        throw std::invalid_argument(what + ": unknown field \"" + k + "\"");
      }
    } catch (const Json::exception&) {
      throw std::invalid_argument(what + ": field \"" + k + "\" has the wrong type");
    }
  }
  return c;
}

}  // namespace aglab
