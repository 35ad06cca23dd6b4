#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "aglab/config.hpp"

namespace {

using namespace aglab;

// exit codes: 0 ok, 2 config error, 3 missing artifact, 4 numerical failure
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

GmmSpec load_spec(const ExperimentConfig& cfg) {
  if (cfg.gmm_path.empty()) return GmmSpec::default_two_class();
  return gmm_from_json(parse_json(read_text_file(cfg.gmm_path), "gmm spec"));
}

struct BackendBundle {
  GmmSpec spec;
  std::unique_ptr<ScoreBackend> score;
};

BackendBundle make_backend(const ExperimentConfig& cfg) {
  BackendBundle b;
  b.spec = load_spec(cfg);
  NoiseSchedule sched = cfg.make_schedule();
  if (cfg.backend == "mlp") {
    MlpScoreNet net = checkpoint_from_json(parse_json(read_text_file(cfg.checkpoint_path), "checkpoint"));
    if (net.dim() != b.spec.dim)
      throw std::invalid_argument("checkpoint dimension does not match the data spec");
    b.score = std::make_unique<MlpBackend>(std::move(net), std::move(sched));
  } else {
    b.score = std::make_unique<AnalyticBackend>(b.spec, std::move(sched));
  }
  return b;
}

std::vector<Condition> resolve_conds(const ExperimentConfig& cfg, int cond_flag,
                                     std::size_t num_classes) {
  if (cond_flag >= 0 && static_cast<std::size_t>(cond_flag) >= num_classes)
    throw std::invalid_argument("flag \"--cond\": class " + std::to_string(cond_flag) +
                                " does not exist (backend has " + std::to_string(num_classes) + ")");
  std::vector<Condition> conds;
  conds.reserve(cfg.seeds.size());
  for (std::uint64_t s : cfg.seeds) {
    int c = cond_flag >= 0 ? cond_flag : static_cast<int>(s % num_classes);
    conds.push_back(Condition::of(c));
  }
  return conds;
}

void for_each_index(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- policy selection shared by sample and eval ----

struct PolicySpec {
  enum class Kind { Fixed, Ag, Linear };
  Kind kind = Kind::Fixed;
  std::string name;
  Policy fixed;
  double gamma_bar = 1.0;
};

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == ' ') c = '-';
  }
  return s;
}

PolicySpec resolve_policy(const ExperimentConfig& cfg, const std::string& sel, int truncate,
                          const std::string& alphas_path) {
  PolicySpec p;
  if (sel == "cfg") {
    if (truncate > 0) {
      p.fixed = make_truncated_cfg(cfg.T, truncate, cfg.strength);
      p.name = "cfg-trunc" + std::to_string(truncate);
    } else {
      p.fixed = make_full_cfg(cfg.T, cfg.strength);
      p.name = "cfg-full";
    }
  } else if (sel == "cond") {
    p.fixed = Policy(static_cast<std::size_t>(cfg.T), GuidanceChoice::cond());
    p.name = "cond";
  } else if (sel == "uncond") {
    p.fixed = Policy(static_cast<std::size_t>(cfg.T), GuidanceChoice::uncond());
    p.name = "uncond";
  } else if (sel == "interleave") {
    p.fixed = make_naive_interleave(cfg.T, cfg.strength);
    p.name = "interleave";
  } else if (sel == "ag") {
    p.kind = PolicySpec::Kind::Ag;
    p.gamma_bar = cfg.gamma_bar;
    std::ostringstream os;
    os << "ag-" << cfg.gamma_bar;
    p.name = sanitize(os.str());
  } else if (sel == "linear") {
    p.kind = PolicySpec::Kind::Linear;
    p.name = "linear";
  } else if (sel == "from-alphas") {
    if (alphas_path.empty())
      throw std::invalid_argument("--policy from-alphas requires --alphas <file>");
    ChoiceSet choices;
    AlphaMatrix alpha = alphas_from_json(parse_json(read_text_file(alphas_path), "alphas"), &choices);
    if (alpha.rows.size() != static_cast<std::size_t>(cfg.T))
      throw std::invalid_argument("alphas file was searched at a different T");
    p.fixed = extract_policy(alpha, choices, ExtractMode::Argmax);
    p.name = "from-alphas";
  } else if (sel.rfind("file:", 0) == 0) {
    std::string path = sel.substr(5);
    p.fixed = policy_from_json(parse_json(read_text_file(path), "policy"));
    if (p.fixed.size() != static_cast<std::size_t>(cfg.T))
      throw std::invalid_argument("policy file length does not match T");
    p.name = sanitize(std::filesystem::path(path).stem().string());
  } else {
    throw std::invalid_argument(
        "flag \"--policy\": expected cfg|cond|uncond|interleave|ag|linear|from-alphas|file:<path>, got '" +
        sel + "'");
  }
  return p;
}

RunResult run_policy_once(const ScoreBackend& backend, const ExperimentConfig& cfg,
                          const PolicySpec& pspec, const LinearCoeffs* coeffs, std::uint64_t seed,
                          const Condition& cond) {
  GenerateOptions opts;
  opts.solver = cfg.solver_kind();
  opts.cond = cond;
  switch (pspec.kind) {
    case PolicySpec::Kind::Fixed: {
      FixedPolicyController ctrl(pspec.fixed);
      return generate(backend, ctrl, seed, opts);
    }
    case PolicySpec::Kind::Ag: {
      AgConfig ag;
      ag.gamma_bar = pspec.gamma_bar;
      AgController ctrl(ag, cfg.strength);
      return generate(backend, ctrl, seed, opts);
    }
    case PolicySpec::Kind::Linear:
    default: {
      if (!coeffs) throw std::invalid_argument("linear policy requires --coeffs <file>");
      return run_linear_ag(backend, *coeffs, seed, cond, cfg.strength, cfg.solver_kind());
    }
  }
}

LinearCoeffs load_coeffs(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("linear policy requires --coeffs <file>");
  return coeffs_from_json(parse_json(read_text_file(path), "coefficients"));
}

// ---- train ----

void cmd_train(const ExperimentConfig& cfg) {
  GmmSpec spec = load_spec(cfg);
  NoiseSchedule sched = cfg.make_schedule();
  MlpScoreNet net(spec.dim, spec.num_classes(), cfg.train_seed);
  TrainConfig tc;
  tc.steps = cfg.train_steps;
  tc.batch = static_cast<std::size_t>(cfg.batch);
  tc.p_uncond = cfg.p_uncond;
  tc.lr = cfg.train_lr;
  tc.seed = cfg.train_seed;
  TrainResult res = train_mlp(spec, sched, net, tc);
  if (res.diverged) {
    throw NumericalFailure("training diverged at step " + std::to_string(res.aborted_at) +
                           "; weights rolled back, no checkpoint written");
  }
  std::string ckpt = cfg.out_dir + "/checkpoint.json";
  write_text_file(ckpt, checkpoint_to_json(net).dump(2) + "\n");
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < res.loss_history.size(); ++i) {
    csv << i << ',' << res.loss_history[i] << '\n';
  }
  std::string hist = cfg.out_dir + "/loss_history.csv";
  write_text_file(hist, csv.str());
  double final_loss = res.loss_history.empty() ? 0.0 : res.loss_history.back();
  std::cout << "trained " << cfg.train_steps << " steps; final loss " << final_loss << "\n"
            << "wrote " << ckpt << "\nwrote " << hist << "\n";
}

// ---- sample ----

void cmd_sample(const ExperimentConfig& cfg, const std::string& policy_sel, int cond_flag,
                int truncate, const std::string& coeffs_path, const std::string& alphas_path,
                int jobs) {
  BackendBundle b = make_backend(cfg);
  PolicySpec pspec = resolve_policy(cfg, policy_sel, truncate, alphas_path);
  LinearCoeffs coeffs;
  if (pspec.kind == PolicySpec::Kind::Linear) coeffs = load_coeffs(coeffs_path);
  auto conds = resolve_conds(cfg, cond_flag, b.score->num_classes());

  std::vector<RunResult> runs(cfg.seeds.size());
  for_each_index(cfg.seeds.size(), jobs, [&](std::size_t i) {
    runs[i] = run_policy_once(*b.score, cfg, pspec, &coeffs, cfg.seeds[i], conds[i]);
  });

  std::int64_t total_nfe = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    total_nfe += runs[i].nfe;
    std::string path =
        cfg.out_dir + "/trajectories/" + pspec.name + "_seed" + std::to_string(cfg.seeds[i]) + ".jsonl";
    write_text_file(path, trajectory_to_jsonl(runs[i].record));
  }
  std::cout << "policy " << pspec.name << ": wrote " << runs.size() << " trajectory files under "
            << cfg.out_dir << "/trajectories; total NFE " << total_nfe << "\n";
}

// ---- search ----

void cmd_search(const ExperimentConfig& cfg, const std::string& out_path) {
  BackendBundle b = make_backend(cfg);
  SearchConfig sc;
  sc.choices.strengths = cfg.strengths;
  sc.lambda = cfg.lambda;
  sc.cost_cap = cfg.cost_cap;
  sc.gumbel_temperature = cfg.temperature;
  sc.epochs = cfg.epochs;
  sc.lr = cfg.search_lr;
  sc.seed = cfg.seeds.front();
  sc.solver = cfg.solver_kind();
  sc.dataset_strength = cfg.strength;
  sc.validate(cfg.T);

  auto dataset = make_search_dataset(*b.score, static_cast<std::size_t>(cfg.pairs), cfg.strength,
                                     cfg.solver_kind(), sc.seed);
  SearchResult res = search(*b.score, dataset, sc);

  std::string alphas_path = out_path.empty() ? cfg.out_dir + "/alphas.json" : out_path;
  write_text_file(alphas_path, alphas_to_json(res.alpha, sc.choices).dump(2) + "\n");

  // per-step mean option scores (softmax weights per step row)
  std::ostringstream scores;
  scores << "step";
  for (std::size_t j = 0; j < sc.choices.num_options(); ++j) {
    scores << ",mean_" << sc.choices.choice_at(j).str();
  }
  scores << '\n';
  auto w = res.alpha.weights();
  for (std::size_t i = 0; i < w.size(); ++i) {
    scores << (cfg.T - static_cast<int>(i));
    for (double v : w[i]) scores << ',' << v;
    scores << '\n';
  }
  std::string scores_path = cfg.out_dir + "/scores.csv";
  write_text_file(scores_path, scores.str());

  Policy extracted = extract_policy(res.alpha, sc.choices, ExtractMode::Argmax);
  std::string policy_path = cfg.out_dir + "/policy.json";
  write_text_file(policy_path, policy_to_json(extracted).dump() + "\n");

  std::ostringstream hist;
  hist << "epoch,replication,cost_overshoot\n";
  for (std::size_t e = 0; e < res.replication_history.size(); ++e) {
    hist << e + 1 << ',' << res.replication_history[e] << ',' << res.cost_history[e] << '\n';
  }
  write_text_file(cfg.out_dir + "/search_history.csv", hist.str());

  int nfe = nfe_of_policy(extracted);
  std::cout << "searched " << cfg.epochs << " epochs over " << dataset.size() << " pairs\n"
            << "wrote " << alphas_path << ", " << scores_path << ", " << policy_path
            << "\nextracted policy NFE " << nfe << "\n";
}

// ---- fit-linear ----

void cmd_fit_linear(const ExperimentConfig& cfg, const std::string& paths_path,
                    const std::string& out_path) {
  PathDataset ds;
  if (!paths_path.empty()) {
    ds = paths_from_jsonl(read_text_file(paths_path));
  } else {
    BackendBundle b = make_backend(cfg);
    ds = collect_paths(*b.score, cfg.strength, static_cast<std::size_t>(cfg.n_paths),
                       cfg.seeds.front(), cfg.solver_kind());
    write_text_file(cfg.out_dir + "/paths.jsonl", paths_to_jsonl(ds));
  }
  LinearCoeffs coeffs = fit_linear(ds, cfg.window);
  std::string path = out_path.empty() ? cfg.out_dir + "/coeffs.json" : out_path;
  write_text_file(path, coeffs_to_json(coeffs).dump(2) + "\n");
  std::cout << "fitted rows 1.." << coeffs.T - 1 << " from " << ds.trajectories.size()
            << " score paths";
  if (cfg.window > 0) std::cout << " (window " << cfg.window << ")";
  std::cout << "\nwrote " << path << "\n";
}

// ---- eval ----

struct EvalMachine {
  const ExperimentConfig& cfg;
  BackendBundle backend;
  std::vector<Condition> conds;
  EndpointSet baseline;
  std::vector<std::vector<double>> reference;  // data-distribution draws, same conds
  int jobs = 1;

  EvalMachine(const ExperimentConfig& c, int cond_flag, int jobs_)
      : cfg(c), backend(make_backend(c)), jobs(jobs_) {
    conds = resolve_conds(cfg, cond_flag, backend.score->num_classes());
    baseline.seeds = cfg.seeds;
    baseline.endpoints.resize(cfg.seeds.size());
    baseline.nfes.resize(cfg.seeds.size());
    for_each_index(cfg.seeds.size(), jobs, [&](std::size_t i) {
      FixedPolicyController ctrl(make_full_cfg(cfg.T, cfg.strength));
      GenerateOptions opts;
      opts.solver = cfg.solver_kind();
      opts.cond = conds[i];
      auto run = generate(*backend.score, ctrl, cfg.seeds[i], opts);
      baseline.endpoints[i] = run.x0.values();
      baseline.nfes[i] = run.nfe;
    });
    reference.resize(cfg.seeds.size());
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      Rng rng(cfg.seeds[i], /*stream=*/0x5efd);
      reference[i] = sample_gmm(backend.spec, rng, conds[i].cls);
    }
  }

  EvalReport evaluate(const PolicySpec& pspec, const LinearCoeffs* coeffs,
                      const std::string& experiment) {
    EndpointSet run_set;
    run_set.seeds = cfg.seeds;
    run_set.endpoints.resize(cfg.seeds.size());
    run_set.nfes.resize(cfg.seeds.size());
    std::vector<TrajectoryRecord> records(cfg.seeds.size());
    for_each_index(cfg.seeds.size(), jobs, [&](std::size_t i) {
      auto run = run_policy_once(*backend.score, cfg, pspec, coeffs, cfg.seeds[i], conds[i]);
      run_set.endpoints[i] = run.x0.values();
      run_set.nfes[i] = run.nfe;
      records[i] = std::move(run.record);
    });

    EvalReport rep;
    rep.experiment = experiment;
    rep.policy = pspec.name;
    rep.seeds = cfg.seeds;
    std::vector<double> nfes(run_set.nfes.begin(), run_set.nfes.end());
    rep.nfe = mean_ci_99(nfes);
    rep.endpoint_mse = endpoint_replication(run_set, baseline).mse;
    rep.sliced_w = sliced_wasserstein(run_set.endpoints, reference, 128, /*seed=*/0);
    rep.gamma = gamma_curves(records);
    return rep;
  }

  void write(const EvalReport& rep) const {
    std::string base = report_path(cfg.out_dir, rep.experiment, rep.policy, "csv");
    write_text_file(base, frontier_csv_header() + "\n" + frontier_csv_row(rep) + "\n");
    write_text_file(report_path(cfg.out_dir, rep.experiment, rep.policy, "json"),
                    report_to_json(rep).dump(2) + "\n");
    if (!rep.gamma.empty()) {
      write_text_file(report_path(cfg.out_dir, rep.experiment, rep.policy + "_gamma", "csv"),
                      gamma_csv(rep.gamma));
    }
  }
};

std::vector<double> parse_double_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("flag \"") + flag + "\": bad number '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string("flag \"") + flag + "\": empty list");
  return out;
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& policy_sel, int cond_flag,
              int truncate, const std::string& coeffs_path, const std::string& alphas_path,
              const std::string& experiment, const std::string& sweep, int jobs) {
  EvalMachine machine(cfg, cond_flag, jobs);
  std::vector<EvalReport> rows;
  if (!sweep.empty()) {
    for (double gb : parse_double_list(sweep, "--gamma-bar-sweep")) {
      ExperimentConfig c = cfg;
      c.gamma_bar = gb;
      PolicySpec pspec = resolve_policy(c, "ag", 0, "");
      pspec.gamma_bar = gb;
      rows.push_back(machine.evaluate(pspec, nullptr, experiment));
    }
  } else {
    PolicySpec pspec = resolve_policy(cfg, policy_sel, truncate, alphas_path);
    LinearCoeffs coeffs;
    bool has_coeffs = false;
    if (pspec.kind == PolicySpec::Kind::Linear) {
      coeffs = load_coeffs(coeffs_path);
      has_coeffs = true;
    }
    rows.push_back(machine.evaluate(pspec, has_coeffs ? &coeffs : nullptr, experiment));
  }

  // frontier.csv accumulates one row per policy point across invocations;
  // re-evaluating a policy replaces its row, so repeated runs stay idempotent
  std::string frontier_path = cfg.out_dir + "/" + experiment + "/frontier.csv";
  std::vector<std::string> kept;
  if (std::filesystem::exists(frontier_path)) {
    std::istringstream in(read_text_file(frontier_path));
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) { header = false; continue; }
      if (!line.empty()) kept.push_back(line);
    }
  }
  auto policy_of = [](const std::string& row) {
    std::size_t a = row.find(',');
    if (a == std::string::npos) return std::string();
    std::size_t b = row.find(',', a + 1);
    return row.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1);
  };
  for (const auto& rep : rows) {
    machine.write(rep);
    std::string row = frontier_csv_row(rep);
    bool replaced = false;
    for (auto& old : kept) {
      if (policy_of(old) == rep.policy) { old = row; replaced = true; break; }
    }
    if (!replaced) kept.push_back(row);
  }
  std::ostringstream frontier;
  frontier << frontier_csv_header() << '\n';
  for (const auto& line : kept) frontier << line << '\n';
  write_text_file(frontier_path, frontier.str());
  std::cout << "evaluated " << rows.size() << " policy point(s) over " << cfg.seeds.size()
            << " seeds\nwrote " << frontier_path << "\n";
  for (const auto& rep : rows) {
    std::cout << "  " << rep.policy << ": nfe " << rep.nfe.mean << ", endpoint mse "
              << rep.endpoint_mse.mean << "\n";
  }
}

// ---- export-figures ----

void cmd_export_figures(const ExperimentConfig& cfg, int cond_flag, const std::string& coeffs_path,
                        const std::string& alphas_path, int jobs) {
  EvalMachine machine(cfg, cond_flag, jobs);
  std::string dir = cfg.out_dir + "/figures";

  // branch-alignment curve from dual-branch diagnostic runs at s=1
  {
    std::vector<TrajectoryRecord> records(cfg.seeds.size());
    for_each_index(cfg.seeds.size(), jobs, [&](std::size_t i) {
      FixedPolicyController ctrl(make_full_cfg(cfg.T, 1.0));
      GenerateOptions opts;
      opts.solver = cfg.solver_kind();
      opts.cond = machine.conds[i];
      records[i] = generate(*machine.backend.score, ctrl, cfg.seeds[i], opts).record;
    });
    write_text_file(dir + "/gamma_curve.csv", gamma_csv(gamma_curves(records)));
  }

  // replication-vs-budget frontiers: naive truncation and threshold sweep
  {
    std::ostringstream naive;
    naive << frontier_csv_header() << '\n';
    PolicySpec full = resolve_policy(cfg, "cfg", 0, "");
    naive << frontier_csv_row(machine.evaluate(full, nullptr, "figures")) << '\n';
    for (int m : {2, 4, 6, 8, 10, 12, 16}) {
      if (m >= cfg.T) continue;
      PolicySpec pspec = resolve_policy(cfg, "cfg", m, "");
      naive << frontier_csv_row(machine.evaluate(pspec, nullptr, "figures")) << '\n';
    }
    write_text_file(dir + "/naive_frontier.csv", naive.str());

    std::ostringstream ag;
    ag << frontier_csv_header() << '\n';
    for (double gb : {0.7, 0.8, 0.9, 0.95, 0.99, 1.0}) {
      ExperimentConfig c = cfg;
      c.gamma_bar = gb;
      PolicySpec pspec = resolve_policy(c, "ag", 0, "");
      ag << frontier_csv_row(machine.evaluate(pspec, nullptr, "figures")) << '\n';
    }
    write_text_file(dir + "/ag_frontier.csv", ag.str());
  }

  if (!coeffs_path.empty()) {
    LinearCoeffs coeffs = load_coeffs(coeffs_path);
    std::ostringstream lin;
    lin << frontier_csv_header() << '\n';
    PolicySpec linear = resolve_policy(cfg, "linear", 0, "");
    lin << frontier_csv_row(machine.evaluate(linear, &coeffs, "figures")) << '\n';
    PolicySpec inter = resolve_policy(cfg, "interleave", 0, "");
    lin << frontier_csv_row(machine.evaluate(inter, nullptr, "figures")) << '\n';
    write_text_file(dir + "/linear_frontier.csv", lin.str());
  }

  if (!alphas_path.empty()) {
    ChoiceSet choices;
    AlphaMatrix alpha = alphas_from_json(parse_json(read_text_file(alphas_path), "alphas"), &choices);
    std::ostringstream scores;
    scores << "step";
    for (std::size_t j = 0; j < choices.num_options(); ++j) {
      scores << ",mean_" << choices.choice_at(j).str();
    }
    scores << '\n';
    auto w = alpha.weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
      scores << (static_cast<int>(w.size()) - static_cast<int>(i));
      for (double v : w[i]) scores << ',' << v;
      scores << '\n';
    }
    write_text_file(dir + "/search_weights.csv", scores.str());
  }

  std::cout << "wrote figure CSV bundle under " << dir << "\n";
}

std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  ExperimentConfig cfg;
  try {
    std::string config_path = find_config_path(argc, argv);
    if (!config_path.empty()) {
      cfg = config_from_json(parse_json(read_text_file(config_path), "config"));
    }
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"guided-diffusion policy laboratory"};
  app.fallthrough();  // lets --config appear after the subcommand name
  app.require_subcommand(1);

  std::string config_path_opt;
  bool dry_run = false;
  int jobs = 1;
  std::string seeds_text;
  app.add_option("--config", config_path_opt, "JSON experiment config; flags override its fields");

  auto add_common = [&](CLI::App* sub) {
    sub->add_flag("--dry-run", dry_run, "print the resolved config and write nothing");
    sub->add_option("--jobs", jobs, "worker threads over seeds (default 1)")->check(CLI::PositiveNumber);
    sub->add_option("--backend", cfg.backend, "analytic|mlp");
    sub->add_option("--gmm", cfg.gmm_path, "data mixture JSON (default: built-in two-class)");
    sub->add_option("--checkpoint", cfg.checkpoint_path, "network checkpoint (mlp backend)");
    sub->add_option("--schedule", cfg.schedule, "cosine|linear-beta");
    sub->add_option("--T", cfg.T, "executed steps per run");
    sub->add_option("--solver", cfg.solver, "ddim|euler");
    sub->add_option("--strength", cfg.strength, "guidance strength s");
    sub->add_option("--gamma-bar", cfg.gamma_bar, "branch-alignment switch threshold");
    sub->add_option("--seeds", seeds_text, "seed list: <n> or <lo>..<hi>");
    sub->add_option("--out-dir", cfg.out_dir, "output directory");
  };

  // train
  auto* train = app.add_subcommand("train", "train the score network on the data mixture");
  add_common(train);
  train->add_option("--train-steps", cfg.train_steps, "optimizer steps");
  train->add_option("--batch", cfg.batch, "batch size");
  train->add_option("--p-uncond", cfg.p_uncond, "label-drop probability");
  train->add_option("--train-lr", cfg.train_lr, "learning rate");
  train->add_option("--train-seed", cfg.train_seed, "training seed");

  // sample
  std::string policy_sel = "cfg";
  int cond_flag = -1;
  int truncate = 0;
  std::string coeffs_path, alphas_path;
  auto* sample = app.add_subcommand("sample", "generate trajectories under a policy");
  add_common(sample);
  sample->add_option("--policy", policy_sel, "cfg|cond|uncond|interleave|ag|linear|from-alphas|file:<path>");
  sample->add_option("--cond", cond_flag, "class condition (default: seed % classes)");
  sample->add_option("--truncate", truncate, "guided steps before switching to cond (cfg policy)");
  sample->add_option("--coeffs", coeffs_path, "extrapolation coefficients (linear policy)");
  sample->add_option("--alphas", alphas_path, "searched logits (from-alphas policy)");

  // search
  std::string search_out;
  auto* search_cmd = app.add_subcommand("search", "differentiable policy search over step choices");
  add_common(search_cmd);
  search_cmd->add_option("--lambda", cfg.lambda, "budget penalty weight");
  search_cmd->add_option("--cost-cap", cfg.cost_cap, "target NFE budget c");
  search_cmd->add_option("--temperature", cfg.temperature, "gumbel-softmax temperature");
  search_cmd->add_option("--epochs", cfg.epochs, "passes over the pair dataset");
  search_cmd->add_option("--search-lr", cfg.search_lr, "logit learning rate");
  search_cmd->add_option("--pairs", cfg.pairs, "search dataset size");
  search_cmd->add_option("--out", search_out, "alphas output path (default <out-dir>/alphas.json)");

  // fit-linear
  std::string paths_path, fit_out;
  auto* fit = app.add_subcommand("fit-linear", "fit score-extrapolation coefficients");
  add_common(fit);
  fit->add_option("--paths", paths_path, "score-path dataset JSONL (default: harvest from backend)");
  fit->add_option("--n-paths", cfg.n_paths, "paths to harvest when none are given");
  fit->add_option("--window", cfg.window, "cap regressors to the most recent steps (0 = all)");
  fit->add_option("--out", fit_out, "coefficients output path (default <out-dir>/coeffs.json)");

  // eval
  std::string experiment = "frontier";
  std::string sweep;
  auto* eval_cmd = app.add_subcommand("eval", "score a policy against the full-guidance baseline");
  add_common(eval_cmd);
  eval_cmd->add_option("--policy", policy_sel, "cfg|cond|uncond|interleave|ag|linear|from-alphas|file:<path>");
  eval_cmd->add_option("--cond", cond_flag, "class condition (default: seed % classes)");
  eval_cmd->add_option("--truncate", truncate, "guided steps before switching to cond (cfg policy)");
  eval_cmd->add_option("--coeffs", coeffs_path, "extrapolation coefficients (linear policy)");
  eval_cmd->add_option("--alphas", alphas_path, "searched logits (from-alphas policy)");
  eval_cmd->add_option("--experiment", experiment, "report directory name");
  eval_cmd->add_option("--gamma-bar-sweep", sweep, "comma list of thresholds; one frontier row each");

  // export-figures
  auto* figures = app.add_subcommand("export-figures", "write the standard CSV bundle");
  add_common(figures);
  figures->add_option("--cond", cond_flag, "class condition (default: seed % classes)");
  figures->add_option("--coeffs", coeffs_path, "include the extrapolation comparison");
  figures->add_option("--alphas", alphas_path, "include the per-step weight table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (!seeds_text.empty()) cfg.seeds = parse_seed_range(seeds_text);
    cfg.validate();
    if (dry_run) {
      std::cout << config_to_json(cfg).dump(2) << "\n";
      std::cout << "dry-run: no outputs written\n";
      return 0;
    }
    if (train->parsed()) {
      cmd_train(cfg);
    } else if (sample->parsed()) {
      cmd_sample(cfg, policy_sel, cond_flag, truncate, coeffs_path, alphas_path, jobs);
    } else if (search_cmd->parsed()) {
      cmd_search(cfg, search_out);
    } else if (fit->parsed()) {
      cmd_fit_linear(cfg, paths_path, fit_out);
    } else if (eval_cmd->parsed()) {
      cmd_eval(cfg, policy_sel, cond_flag, truncate, coeffs_path, alphas_path, experiment, sweep, jobs);
    } else if (figures->parsed()) {
      cmd_export_figures(cfg, cond_flag, coeffs_path, alphas_path, jobs);
    }
    return 0;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
