#pragma once

// Experiment orchestration: degradation table, dropout-vs-plain thresholds,
// recovery timing from simulation traces and the five node-disconnection
// runs. Every output is a pure function of the effective config.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ftmlp/config.hpp"
#include "ftmlp/data.hpp"
#include "ftmlp/fault.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/rng.hpp"
#include "ftmlp/runtime/recovery.hpp"
#include "ftmlp/runtime/simulation.hpp"
#include "ftmlp/trainer.hpp"

#ifndef FTMLP_VERSION
#define FTMLP_VERSION "0.1.0"
#endif

namespace ftmlp::suite {

enum class Suite { all, degradation, dropout_vs_plain, recovery, disconnect };

inline Suite suite_from_string(std::string_view s) {
  if (s == "all") return Suite::all;
  if (s == "degradation" || s == "degradation_sweep") return Suite::degradation;
  if (s == "dropout_vs_plain") return Suite::dropout_vs_plain;
  if (s == "recovery" || s == "recovery_timing") return Suite::recovery;
  if (s == "disconnect" || s == "physical_disconnect") return Suite::disconnect;
  throw ConfigError("unknown experiment '" + std::string(s) + "'");
}

inline std::string_view to_string(Suite s) {
  switch (s) {
    case Suite::all: return "all";
    case Suite::degradation: return "degradation";
    case Suite::dropout_vs_plain: return "dropout_vs_plain";
    case Suite::recovery: return "recovery";
    case Suite::disconnect: return "disconnect";
  }
  return "?";
}

struct ExperimentConfig {
  Suite suite = Suite::all;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  data::DataGenConfig data;
  nn::NetworkSpec spec = nn::NetworkSpec::reference();
  train::TrainConfig train;
  std::size_t trials = 100;
  std::size_t k_max = 7;
  std::size_t threshold_k_max = 20;
  double factor = 2.0;
  std::size_t permutations = fault::kDefaultPermutations;
  std::uint64_t sweep_seed = 7;
  runtime::SimConfig sim;
  std::uint64_t sim_seed = 11;
  std::size_t workload = 100;
  runtime::Micros workload_interval = 10 * runtime::kMillis;

  static ExperimentConfig from(const KeyValues& kv) {
    ExperimentConfig c;
    c.suite = suite_from_string(kv.str("experiment", "all"));
    if (auto s = kv.get("seeds")) c.seeds = parse_uint_list(*s);
    if (c.seeds.empty()) throw ConfigError("seed list must not be empty");
    c.data = config::data_config(kv);
    c.spec = config::network_spec(kv, c.data.feature_dim);
    if (c.spec.inputs() != c.data.feature_dim) throw ConfigError("net.layers must start with data.feature_dim");
    if (c.spec.outputs() != 1) throw ConfigError("experiments use a single regression output");
    c.train = config::train_config(kv);
    c.trials = kv.integer("sweep.trials", c.trials);
    c.k_max = kv.integer("sweep.k_max", c.k_max);
    c.threshold_k_max = kv.integer("sweep.threshold_k_max", c.threshold_k_max);
    c.factor = kv.number("sweep.factor", c.factor);
    c.permutations = kv.integer("sweep.permutations", c.permutations);
    c.sweep_seed = kv.integer("sweep.seed", c.sweep_seed);
    c.sim = config::sim_config(kv);
    c.sim_seed = kv.integer("sim.seed", c.sim_seed);
    c.workload = kv.integer("sim.workload", c.workload);
    c.workload_interval = config::millis(kv, "sim.workload_interval_ms", c.workload_interval);
    c.validate();
    return c;
  }

  void validate() const {
    const auto hidden = spec.hidden_count();
    if (trials == 0) throw ConfigError("sweep.trials must be >= 1");
    if (k_max > hidden || threshold_k_max > hidden)
      throw ConfigError("k range exceeds the " + std::to_string(hidden) + " hidden neurons");
    if (threshold_k_max < k_max) throw ConfigError("sweep.threshold_k_max must be >= sweep.k_max");
    if (!(factor > 1.0)) throw ConfigError("sweep.factor must be > 1");
    if (workload < 4 || workload > data.n_test) throw ConfigError("sim.workload must be in [4, data.n_test]");
    if (workload_interval <= 0) throw ConfigError("sim.workload_interval_ms must be positive");
  }

  // Complete effective config; loading it back reproduces the run.
  KeyValues effective() const {
    KeyValues kv;
    kv.set("experiment", std::string(to_string(suite)));
    kv.set("seeds", join(seeds));
    config::echo(kv, data);
    config::echo(kv, spec);
    config::echo(kv, train);
    kv.set("sweep.trials", std::to_string(trials));
    kv.set("sweep.k_max", std::to_string(k_max));
    kv.set("sweep.threshold_k_max", std::to_string(threshold_k_max));
    kv.set("sweep.factor", data::format_double(factor));
    kv.set("sweep.permutations", std::to_string(permutations));
    kv.set("sweep.seed", std::to_string(sweep_seed));
    config::echo(kv, sim);
    kv.set("sim.seed", std::to_string(sim_seed));
    kv.set("sim.workload", std::to_string(workload));
    kv.set("sim.workload_interval_ms", config::ms_text(workload_interval));
    return kv;
  }
};

// ---------------------------------------------------------------------------
// report rendering

// One CSV (optionally with leading "# " comment lines) as a markdown table.
inline std::string render_csv_markdown(std::string_view csv) {
  std::ostringstream out;
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.starts_with("#")) {
      out << "> " << trim(std::string_view(line).substr(1)) << "\n";
      continue;
    }
    const auto fields = data::split_fields(line);
    out << "|";
    for (auto f : fields) out << " " << f << " |";
    out << "\n";
    if (!header_done) {
      out << "|";
      for (std::size_t i = 0; i < fields.size(); ++i) out << "---|";
      out << "\n";
      header_done = true;
    }
  }
  return out.str();
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

// Every *.csv in dir, sorted by name, as markdown sections.
inline std::string render_report(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  if (files.empty()) throw ConfigError("no CSV files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::string out = "# Report\n";
  for (const auto& f : files) out += "\n## " + f.filename().string() + "\n\n" + render_csv_markdown(read_text(f));
  return out;
}

// ---------------------------------------------------------------------------
// suite pieces

struct SeedRun {
  std::uint64_t seed = 0;
  fault::ComparisonReport cmp;
};

inline std::vector<std::size_t> k_range(std::size_t k_max) {
  std::vector<std::size_t> k(k_max + 1);
  for (std::size_t i = 0; i <= k_max; ++i) k[i] = i;
  return k;
}

inline double inflation(const std::vector<fault::DegradationRow>& rows, std::size_t k) {
  return rows.at(k).mean_mse / rows.front().mean_mse;
}

struct DisconnectRun {
  std::string name;
  std::vector<nn::NeuronId> killed;
  runtime::Micros kill_at = 0;
  std::size_t requests = 0;
  std::size_t post_kill = 0;
  double baseline_mse = 0.0;
  double post_mse = 0.0;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t unanswered = 0;

  double inflation_pct() const { return baseline_mse > 0.0 ? 100.0 * (post_mse / baseline_mse - 1.0) : 0.0; }
  bool live() const { return unanswered == 0; }
  std::string band(double factor) const {
    const double ratio = baseline_mse > 0.0 ? post_mse / baseline_mse : 1.0;
    if (ratio > factor) return "critical";
    if (ratio > 1.25) return "noticeable";
    return "mild";
  }
};

inline runtime::Workload workload_of(const data::Dataset& test, std::size_t count, runtime::Micros interval) {
  auto w = runtime::Workload::from_rows(test, count);
  w.interval = interval;
  return w;
}

inline double mse_over(const std::vector<runtime::Prediction>& p, const data::Dataset& test, std::size_t from,
                       std::size_t* counted = nullptr) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = from; i < p.size(); ++i) {
    if (p[i].outcome != runtime::Outcome::ok) continue;
    const double d = test.y[i] - static_cast<double>(p[i].outputs.at(0));
    acc += d * d;
    ++n;
  }
  if (counted != nullptr) *counted = n;
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

inline DisconnectRun run_disconnect(const std::string& name, const ExperimentConfig& cfg,
                                    const nn::Parameters<float>& params, const data::Dataset& test,
                                    std::vector<nn::NeuronId> killed, std::size_t requests) {
  DisconnectRun r;
  r.name = name;
  r.killed = std::move(killed);
  r.requests = requests;
  const auto w = workload_of(test, requests, cfg.workload_interval);
  const std::size_t first_post = requests / 2;
  r.kill_at = w.time_of(first_post);
  std::vector<runtime::FaultEvent> faults;
  for (const auto& id : r.killed) faults.push_back({r.kill_at, false, id, 0});
  const auto clean = runtime::run_simulation(cfg.sim, cfg.spec, params, w, {}, cfg.sim_seed);
  const auto hurt = runtime::run_simulation(cfg.sim, cfg.spec, params, w, faults, cfg.sim_seed);
  r.baseline_mse = mse_over(clean.predictions, test, first_post);
  r.post_mse = mse_over(hurt.predictions, test, first_post, &r.post_kill);
  r.ok = hurt.count(runtime::Outcome::ok);
  r.failed = hurt.count(runtime::Outcome::failed);
  r.unanswered = hurt.count(runtime::Outcome::unanswered);
  return r;
}

inline std::string ids_text(const std::vector<nn::NeuronId>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : " ") + nn::to_string(id);
  return s;
}

struct RecoveryScenario {
  std::string name;
  std::vector<runtime::FaultEvent> faults;
};

struct ExperimentReport {
  std::vector<std::string> files;
  std::string summary;
};

inline std::string fmt(double v) { return data::format_double(v); }

inline ExperimentReport run_experiment_suite(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  ExperimentReport rep;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    rep.files.push_back(name);
  };
  const bool all = cfg.suite == Suite::all;
  const auto [train_set, test_set] = data::generate(cfg.data);

  std::ostringstream summary;
  summary << "# Experiment summary\n\n"
          << "version: " << FTMLP_VERSION << " (data " << data::kTargetVersion << ")\n\n"
          << "## Effective config\n\n```\n"
          << cfg.effective().dump() << "```\n";
  emit("effective.cfg", cfg.effective().dump());

  // Trained networks are needed by every table.
  std::vector<SeedRun> runs;
  const bool need_compare = all || cfg.suite == Suite::degradation || cfg.suite == Suite::dropout_vs_plain;
  for (auto seed : cfg.seeds) {
    auto tc = cfg.train;
    tc.seed = seed;
    SeedRun run;
    run.seed = seed;
    if (need_compare) {
      const auto ks = k_range(cfg.threshold_k_max);
      auto with = tc;
      with.dropout_enabled = true;
      auto without = tc;
      without.dropout_enabled = false;
      auto& c = run.cmp;
      c.dropout_params = train::train(train_set, cfg.spec, with).params;
      c.plain_params = train::train(train_set, cfg.spec, without).params;
      fault::SweepOptions opt;
      opt.trials = cfg.trials;
      opt.permutations = cfg.permutations;
      Rng a(derive_seed(cfg.sweep_seed, seed));
      Rng b(derive_seed(cfg.sweep_seed, seed));
      c.dropout_rows = fault::degradation_sweep(cfg.spec, c.dropout_params, test_set, ks, a, opt);
      c.plain_rows = fault::degradation_sweep(cfg.spec, c.plain_params, test_set, ks, b, opt);
      c.baseline_dropout = c.dropout_rows.front().mean_mse;
      c.baseline_plain = c.plain_rows.front().mean_mse;
      c.dropout_threshold = fault::estimate_critical_threshold(c.dropout_rows, cfg.factor, cfg.spec.hidden_count());
      c.plain_threshold = fault::estimate_critical_threshold(c.plain_rows, cfg.factor, cfg.spec.hidden_count());
    } else if (runs.empty()) {
      auto with = tc;
      with.dropout_enabled = true;
      run.cmp.dropout_params = train::train(train_set, cfg.spec, with).params;
    }
    runs.push_back(std::move(run));
    if (!need_compare) break;  // runtime tables use the first seed only
  }

  if (all || cfg.suite == Suite::degradation) {
    const auto& rows = runs.front().cmp.dropout_rows;
    std::ostringstream csv;
    fault::write_rows_csv(csv, std::span(rows).first(cfg.k_max + 1));
    emit("degradation.csv", csv.str());
    std::ostringstream by_seed;
    by_seed << "seed,k,mean_mse,degradation_pct,std,trials,p_value\n";
    for (const auto& r : runs)
      for (std::size_t k = 0; k <= cfg.k_max; ++k) {
        const auto& row = r.cmp.dropout_rows[k];
        by_seed << r.seed << ',' << row.k << ',' << fmt(row.mean_mse) << ',' << fmt(row.degradation_pct) << ','
                << fmt(row.std_mse) << ',' << row.trials << ',' << fmt(row.p_value) << '\n';
      }
    emit("degradation_by_seed.csv", by_seed.str());
    summary << "\n## Degradation (dropout network, seed " << runs.front().seed << ")\n\n"
            << render_csv_markdown(csv.str())
            << "\nRandom failure sets of k hidden neurons, " << cfg.trials
            << " trials per k, test-set MSE. p_value: permutation test of per-example squared errors against k = 0.\n";
  }

  if (all || cfg.suite == Suite::dropout_vs_plain) {
    std::ostringstream table, thr;
    table << "seed,k,dropout_mse,dropout_ratio,plain_mse,plain_ratio\n";
    thr << "seed,model,baseline_mse,p_c,k_cross,censored,criterion\n";
    for (const auto& r : runs) {
      for (std::size_t k = 0; k <= cfg.k_max; ++k)
        table << r.seed << ',' << k << ',' << fmt(r.cmp.dropout_rows[k].mean_mse) << ','
              << fmt(inflation(r.cmp.dropout_rows, k)) << ',' << fmt(r.cmp.plain_rows[k].mean_mse) << ','
              << fmt(inflation(r.cmp.plain_rows, k)) << '\n';
      for (const auto& [model, t, base] :
           {std::tuple{"dropout", r.cmp.dropout_threshold, r.cmp.baseline_dropout},
            std::tuple{"plain", r.cmp.plain_threshold, r.cmp.baseline_plain}})
        thr << r.seed << ',' << model << ',' << fmt(base) << ',' << fmt(t.p_c) << ',' << fmt(t.k_cross) << ','
            << (t.censored ? "true" : "false") << ',' << t.criterion() << '\n';
    }
    emit("dropout_vs_plain.csv", table.str());
    emit("thresholds.csv", thr.str());
    summary << "\n## Dropout vs plain\n\n"
            << render_csv_markdown(table.str()) << "\n### Critical thresholds\n\n"
            << render_csv_markdown(thr.str())
            << "\nratio = mean MSE(k) / MSE(0). p_c interpolates the first k (of 0.." << cfg.threshold_k_max
            << ") whose mean MSE exceeds " << fmt(cfg.factor)
            << " x baseline, divided by the hidden neuron count. Reference values: about 0.20 with dropout, about "
               "0.05 without.\n";
  }

  const auto deployed = runs.front().cmp.dropout_params.cast<float>();

  if (all || cfg.suite == Suite::recovery) {
    const auto w = workload_of(test_set, cfg.workload, cfg.workload_interval);
    const runtime::Micros mid = w.time_of(cfg.workload / 2);
    const std::vector<RecoveryScenario> scenarios{
        {"single", {{mid, false, {1, 3}, 0}}},
        {"multiple", {{mid, false, {1, 5}, 0}, {mid, false, {2, 2}, 0}, {mid, false, {2, 7}, 0}}},
        {"coordinator", {{mid, true, {}, 0}}},
    };
    std::ostringstream csv;
    csv << "scenario,subject,injected_ms,detection_ms,stabilization_ms,total_ms,censored,ok,failed,unanswered\n";
    for (const auto& s : scenarios) {
      const auto res = runtime::run_simulation(cfg.sim, cfg.spec, deployed, w, s.faults, cfg.sim_seed);
      for (const auto& r : runtime::measure_recovery(res.trace))
        csv << s.name << ',' << r.subject << ',' << runtime::format_ms(r.injected) << ','
            << runtime::format_ms(r.detection) << ',' << runtime::format_ms(r.stabilization) << ','
            << runtime::format_ms(r.total()) << ',' << (r.censored() ? "true" : "false") << ','
            << res.count(runtime::Outcome::ok) << ',' << res.count(runtime::Outcome::failed) << ','
            << res.count(runtime::Outcome::unanswered) << '\n';
    }
    emit("recovery.csv", csv.str());
    summary << "\n## Recovery timing (simulated)\n\n"
            << render_csv_markdown(csv.str())
            << "\ndetection = declaration (node_failed or handover_started) - injection. stabilization = first "
               "completed inference at or after the declaration - declaration. Budgets: 50 ms node detection, 200 "
               "ms coordinator handover.\n";
  }

  if (all || cfg.suite == Suite::disconnect) {
    Rng pick(derive_seed(cfg.sim_seed, 301));
    const auto l1 = fault::failure_pool(cfg.spec, std::size_t{1});
    const auto l2 = cfg.spec.depth() > 2 ? fault::failure_pool(cfg.spec, std::size_t{2}) : l1;
    const auto hidden = cfg.spec.hidden_neurons();
    auto across = fault::draw_failures(l1, std::min<std::size_t>(2, l1.size()), pick);
    for (const auto& id : fault::draw_failures(l2, 1, pick))
      if (std::find(across.begin(), across.end(), id) == across.end()) across.push_back(id);
    auto sorted = [](std::vector<nn::NeuronId> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    std::vector<DisconnectRun> exps;
    exps.push_back(run_disconnect("exp1", cfg, deployed, test_set, sorted(fault::draw_failures(l1, 1, pick)), cfg.workload));
    exps.push_back(run_disconnect("exp2", cfg, deployed, test_set,
                                  sorted(fault::draw_failures(l2, std::min<std::size_t>(2, l2.size()), pick)), cfg.workload));
    exps.push_back(run_disconnect("exp3", cfg, deployed, test_set, sorted(across),
                                  std::min(cfg.data.n_test, 10 * cfg.workload)));
    exps.push_back(run_disconnect("exp4", cfg, deployed, test_set,
                                  sorted(fault::draw_failures(hidden, std::min<std::size_t>(5, hidden.size()), pick)), cfg.workload));
    exps.push_back(run_disconnect("exp5", cfg, deployed, test_set,
                                  sorted(fault::draw_failures(hidden, std::min<std::size_t>(7, hidden.size()), pick)), cfg.workload));
    std::ostringstream csv;
    csv << "experiment,killed_count,killed,kill_ms,requests,post_kill_ok,baseline_mse,post_mse,inflation_pct,ok,"
           "failed,unanswered,live,band\n";
    for (const auto& e : exps)
      csv << e.name << ',' << e.killed.size() << ',' << ids_text(e.killed) << ',' << runtime::format_ms(e.kill_at) << ','
          << e.requests << ',' << e.post_kill << ',' << fmt(e.baseline_mse) << ',' << fmt(e.post_mse) << ','
          << fmt(e.inflation_pct()) << ',' << e.ok << ',' << e.failed << ',' << e.unanswered << ','
          << (e.live() ? "true" : "false") << ',' << e.band(cfg.factor) << '\n';
    emit("disconnect.csv", csv.str());
    summary << "\n## Node disconnection runs (simulated)\n\n"
            << render_csv_markdown(csv.str())
            << "\nNodes are killed at the midpoint of the workload; MSE covers requests submitted from the kill time "
               "on, against the same requests in a fault-free run. exp3 runs a 10x longer workload. band: critical "
               "above "
            << fmt(cfg.factor) << "x, noticeable above 1.25x.\n";
  }

  rep.summary = summary.str();
  emit("summary.md", rep.summary);
  return rep;
}

}  // namespace ftmlp::suite
