#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/linear.hpp"
#include "aglab/metrics.hpp"
#include "aglab/mlp.hpp"
#include "aglab/search.hpp"
#include "json.hpp"

namespace aglab {

// Ordered maps keep output byte-stable across runs.
using Json = nlohmann::ordered_json;

// Raised when a referenced input file is absent; callers map it to their
// missing-artifact exit path instead of a generic parse failure.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Json parse_json(const std::string& text, const std::string& what) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument(what + ": not valid JSON");
  return j;
}

namespace detail {

inline const Json& field(const Json& j, const char* name, const std::string& what) {
  auto it = j.find(name);
  if (it == j.end()) throw std::invalid_argument(what + ": missing field \"" + name + "\"");
  return *it;
}

}  // namespace detail

// ---- data distribution ----

inline Json gmm_to_json(const GmmSpec& spec) {
  Json j;
  j["v"] = 1;
  j["dim"] = spec.dim;
  j["priors"] = spec.priors;
  Json classes = Json::array();
  for (const auto& cls : spec.classes) {
    Json comps = Json::array();
    for (const auto& k : cls.comps) {
      Json c;
      c["weight"] = k.weight;
      c["mean"] = k.mean;
      c["var"] = k.var;
      comps.push_back(std::move(c));
    }
    classes.push_back(Json{{"comps", std::move(comps)}});
  }
  j["classes"] = std::move(classes);
  return j;
}

inline GmmSpec gmm_from_json(const Json& j) {
  const std::string what = "gmm spec";
  GmmSpec spec;
  spec.dim = detail::field(j, "dim", what).get<std::size_t>();
  spec.priors = detail::field(j, "priors", what).get<std::vector<double>>();
  for (const auto& cls : detail::field(j, "classes", what)) {
    GmmClass c;
    for (const auto& comp : detail::field(cls, "comps", what)) {
      GmmComponent k;
      k.weight = detail::field(comp, "weight", what).get<double>();
      k.mean = detail::field(comp, "mean", what).get<std::vector<double>>();
      k.var = detail::field(comp, "var", what).get<std::vector<double>>();
      c.comps.push_back(std::move(k));
    }
    spec.classes.push_back(std::move(c));
  }
  spec.validate();
  return spec;
}

// ---- network checkpoints: {shape, data[]} per tensor, keyed by name ----

inline Json checkpoint_to_json(const MlpScoreNet& net) {
  Json j;
  j["v"] = 1;
  Json meta;
  meta["dim"] = net.dim();
  meta["num_classes"] = net.num_classes();
  meta["hidden"] = net.hidden();
  meta["time_dim"] = net.time_dim();
  meta["emb_dim"] = net.emb_dim();
  j["meta"] = std::move(meta);
  Json params;
  for (const auto& [name, p] : net.params()) {
    Json entry;
    entry["shape"] = p->shape();
    entry["data"] = p->values();
    params[name] = std::move(entry);
  }
  j["params"] = std::move(params);
  return j;
}

inline MlpScoreNet checkpoint_from_json(const Json& j) {
  const std::string what = "checkpoint";
  const Json& meta = detail::field(j, "meta", what);
  MlpScoreNet net(detail::field(meta, "dim", what).get<std::size_t>(),
                  detail::field(meta, "num_classes", what).get<std::size_t>(),
                  /*seed=*/0, detail::field(meta, "hidden", what).get<std::size_t>(),
                  detail::field(meta, "time_dim", what).get<std::size_t>(),
                  detail::field(meta, "emb_dim", what).get<std::size_t>());
  const Json& params = detail::field(j, "params", what);
  for (auto& [name, p] : net.params()) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument(what + ": missing parameter \"" + name + "\"");
    auto shape = detail::field(*it, "shape", what).get<std::vector<std::size_t>>();
    auto data = detail::field(*it, "data", what).get<std::vector<double>>();
    if (shape != p->shape() || data.size() != p->values().size()) {
      throw std::invalid_argument(what + ": parameter \"" + name + "\" has the wrong shape");
    }
    std::copy(data.begin(), data.end(), p->values().begin());
  }
  return net;
}

// ---- trajectory dumps: JSON lines, one record per step ----

namespace detail {

inline Json condition_to_json(const Condition& c) {
  Json j;
  j["cls"] = c.cls ? Json(*c.cls) : Json(nullptr);
  j["img"] = c.img ? Json(*c.img) : Json(nullptr);
  return j;
}

inline Condition condition_from_json(const Json& j) {
  Condition c;
  if (j.contains("cls") && !j["cls"].is_null()) c.cls = j["cls"].get<int>();
  if (j.contains("img") && !j["img"].is_null()) c.img = j["img"].get<int>();
  return c;
}

}  // namespace detail

inline std::string trajectory_to_jsonl(const TrajectoryRecord& rec) {
  std::ostringstream out;
  Json head;
  head["v"] = 1;
  head["kind"] = "run";
  head["seed"] = rec.seed;
  head["T"] = rec.T;
  out << head.dump() << '\n';
  for (const auto& s : rec.steps) {
    Json j;
    j["v"] = 1;
    j["kind"] = "step";
    j["t"] = s.t;
    j["x"] = s.x;
    if (s.eps_cond) j["eps_cond"] = *s.eps_cond;
    if (s.eps_uncond) j["eps_uncond"] = *s.eps_uncond;
    j["eps_bar"] = s.eps_bar;
    if (s.gamma) j["gamma"] = *s.gamma;
    j["nfe_after"] = s.nfe_after;
    j["choice"] = s.choice;
    out << j.dump() << '\n';
  }
  Json tail;
  tail["v"] = 1;
  tail["kind"] = "end";
  tail["x0"] = rec.x0;
  tail["total_nfe"] = rec.total_nfe;
  out << tail.dump() << '\n';
  return out.str();
}

inline TrajectoryRecord trajectory_from_jsonl(const std::string& text) {
  const std::string what = "trajectory";
  TrajectoryRecord rec;
  std::istringstream in(text);
  std::string line;
  bool saw_head = false, saw_tail = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = parse_json(line, what);
    if (detail::field(j, "v", what).get<int>() != 1)
      throw std::invalid_argument(what + ": unsupported schema version");
    std::string kind = detail::field(j, "kind", what).get<std::string>();
    if (kind == "run") {
      rec.seed = detail::field(j, "seed", what).get<std::uint64_t>();
      rec.T = detail::field(j, "T", what).get<int>();
      saw_head = true;
    } else if (kind == "step") {
      StepRecord s;
      s.t = detail::field(j, "t", what).get<int>();
      s.x = detail::field(j, "x", what).get<std::vector<double>>();
      if (j.contains("eps_cond")) s.eps_cond = j["eps_cond"].get<std::vector<double>>();
      if (j.contains("eps_uncond")) s.eps_uncond = j["eps_uncond"].get<std::vector<double>>();
      s.eps_bar = detail::field(j, "eps_bar", what).get<std::vector<double>>();
      if (j.contains("gamma")) s.gamma = j["gamma"].get<double>();
      s.nfe_after = detail::field(j, "nfe_after", what).get<std::int64_t>();
      s.choice = detail::field(j, "choice", what).get<std::string>();
      rec.steps.push_back(std::move(s));
    } else if (kind == "end") {
      rec.x0 = detail::field(j, "x0", what).get<std::vector<double>>();
      rec.total_nfe = detail::field(j, "total_nfe", what).get<std::int64_t>();
      saw_tail = true;
    } else {
      throw std::invalid_argument(what + ": unknown record kind \"" + kind + "\"");
    }
  }
  if (!saw_head || !saw_tail) throw std::invalid_argument(what + ": incomplete file");
  return rec;
}

// ---- policies: JSON array of tagged choices ----

inline Json policy_to_json(const Policy& p) {
  Json arr = Json::array();
  for (const auto& c : p) arr.push_back(c.str());
  return arr;
}

inline Policy policy_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("policy: expected a JSON array of choices");
  Policy p;
  for (const auto& v : j) p.push_back(GuidanceChoice::parse(v.get<std::string>()));
  return p;
}

// ---- extrapolation coefficients: rows keyed by step, "meta" reserved ----

inline Json coeffs_to_json(const LinearCoeffs& c) {
  Json j;
  Json meta;
  meta["v"] = 1;
  meta["T"] = c.T;
  meta["dim"] = c.dim;
  meta["window"] = c.window;
  j["meta"] = std::move(meta);
  for (const auto& [t, row] : c.rows) {
    Json r;
    r["beta_c"] = row.beta_c;
    r["beta_u"] = row.beta_u;
    j[std::to_string(t)] = std::move(r);
  }
  return j;
}

inline LinearCoeffs coeffs_from_json(const Json& j) {
  const std::string what = "coefficients";
  LinearCoeffs c;
  const Json& meta = detail::field(j, "meta", what);
  c.T = detail::field(meta, "T", what).get<int>();
  c.dim = detail::field(meta, "dim", what).get<std::size_t>();
  c.window = detail::field(meta, "window", what).get<int>();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "meta") continue;
    int t = 0;
    try {
      t = std::stoi(it.key());
    } catch (const std::exception&) {
      throw std::invalid_argument(what + ": unexpected key \"" + it.key() + "\"");
    }
    CoeffRow row;
    row.beta_c = detail::field(*it, "beta_c", what).get<std::vector<double>>();
    row.beta_u = detail::field(*it, "beta_u", what).get<std::vector<double>>();
    RegressorPlan plan = regressor_plan(c.T, t, c.window);
    if (row.beta_c.size() != plan.cond_steps.size() || row.beta_u.size() != plan.uncond_steps.size())
      throw std::invalid_argument(what + ": row " + it.key() + " has the wrong regressor count");
    c.rows[t] = std::move(row);
  }
  return c;
}

// ---- search logits ----

inline Json alphas_to_json(const AlphaMatrix& alpha, const ChoiceSet& choices) {
  Json j;
  j["v"] = 1;
  j["T"] = alpha.rows.size();
  Json opts = Json::array();
  for (std::size_t k = 0; k < choices.num_options(); ++k) opts.push_back(choices.choice_at(k).str());
  j["options"] = std::move(opts);
  Json rows = Json::array();
  for (const auto& r : alpha.rows) rows.push_back(r.values());
  j["rows"] = std::move(rows);
  return j;
}

inline AlphaMatrix alphas_from_json(const Json& j, ChoiceSet* out_choices = nullptr) {
  const std::string what = "alphas";
  const Json& opts = detail::field(j, "options", what);
  if (out_choices) {
    ChoiceSet cs;
    cs.strengths.clear();
    for (const auto& o : opts) {
      GuidanceChoice c = GuidanceChoice::parse(o.get<std::string>());
      if (c.kind == GuidanceChoice::Kind::Cfg) cs.strengths.push_back(c.s);
    }
    *out_choices = cs;
  }
  AlphaMatrix a;
  for (const auto& r : detail::field(j, "rows", what)) {
    auto v = r.get<std::vector<double>>();
    if (v.size() != opts.size()) throw std::invalid_argument(what + ": row width != option count");
    a.rows.push_back(Tensor::vec(std::move(v)));
  }
  if (a.rows.empty()) throw std::invalid_argument(what + ": no rows");
  return a;
}

// ---- score-path datasets: JSON lines, one record per trajectory ----

inline std::string paths_to_jsonl(const PathDataset& ds) {
  std::ostringstream out;
  Json head;
  head["v"] = 1;
  head["kind"] = "paths";
  head["T"] = ds.T;
  head["dim"] = ds.dim;
  out << head.dump() << '\n';
  for (const auto& rec : ds.trajectories) {
    Json j;
    j["v"] = 1;
    j["kind"] = "path";
    j["seed"] = rec.seed;
    j["cond"] = detail::condition_to_json(rec.cond);
    Json steps = Json::array();
    for (const auto& s : rec.steps) {
      Json e;
      e["t"] = s.t;
      e["eps_cond"] = s.eps_cond;
      e["eps_uncond"] = s.eps_uncond;
      steps.push_back(std::move(e));
    }
    j["steps"] = std::move(steps);
    out << j.dump() << '\n';
  }
  return out.str();
}

inline PathDataset paths_from_jsonl(const std::string& text) {
  const std::string what = "path dataset";
  PathDataset ds;
  std::istringstream in(text);
  std::string line;
  bool saw_head = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = parse_json(line, what);
    std::string kind = detail::field(j, "kind", what).get<std::string>();
    if (kind == "paths") {
      ds.T = detail::field(j, "T", what).get<int>();
      ds.dim = detail::field(j, "dim", what).get<std::size_t>();
      saw_head = true;
    } else if (kind == "path") {
      PathRecord rec;
      rec.seed = detail::field(j, "seed", what).get<std::uint64_t>();
      rec.cond = detail::condition_from_json(detail::field(j, "cond", what));
      for (const auto& e : detail::field(j, "steps", what)) {
        PathStep s;
        s.t = detail::field(e, "t", what).get<int>();
        s.eps_cond = detail::field(e, "eps_cond", what).get<std::vector<double>>();
        s.eps_uncond = detail::field(e, "eps_uncond", what).get<std::vector<double>>();
        rec.steps.push_back(std::move(s));
      }
      ds.trajectories.push_back(std::move(rec));
    } else {
      throw std::invalid_argument(what + ": unknown record kind \"" + kind + "\"");
    }
  }
  if (!saw_head) throw std::invalid_argument(what + ": incomplete file");
  return ds;
}

// ---- evaluation reports (full detail; the CSV row lives in metrics.hpp) ----

inline Json report_to_json(const EvalReport& r) {
  Json j;
  j["v"] = 1;
  j["experiment"] = r.experiment;
  j["policy"] = r.policy;
  j["seeds"] = r.seeds;
  j["nfe"] = Json{{"mean", r.nfe.mean}, {"sd", r.nfe.sd}};
  j["endpoint_mse"] =
      Json{{"mean", r.endpoint_mse.mean}, {"ci_lo", r.endpoint_mse.lo}, {"ci_hi", r.endpoint_mse.hi}};
  j["sliced_w"] = r.sliced_w;
  Json gamma = Json::array();
  for (const auto& g : r.gamma) {
    gamma.push_back(Json{{"t", g.t}, {"mean", g.mean}, {"ci_lo", g.lo}, {"ci_hi", g.hi}, {"n", g.n}});
  }
  j["gamma"] = std::move(gamma);
  return j;
}

}  // namespace aglab
