// ftmlp: command-line front end.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "ftmlp/config.hpp"
#include "ftmlp/data.hpp"
#include "ftmlp/deploy.hpp"
#include "ftmlp/experiment.hpp"
#include "ftmlp/fault.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/runtime/recovery.hpp"
#include "ftmlp/runtime/simulation.hpp"
#include "ftmlp/runtime/socket.hpp"
#include "ftmlp/trainer.hpp"

namespace fs = std::filesystem;
using namespace ftmlp;

namespace {

// Usage-level failure: reported on one line, exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGTERM, &sa, nullptr);
  sigaction(SIGINT, &sa, nullptr);
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = ".";

  KeyValues kv() const { return config.empty() ? KeyValues{} : KeyValues::load(config); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "seed for this command");
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory");
}

std::pair<data::Dataset, data::Dataset> load_or_generate(const std::string& dir, const KeyValues& kv) {
  if (!dir.empty())
    return {data::read_csv(fs::path(dir) / "train.csv", data::Split::train),
            data::read_csv(fs::path(dir) / "test.csv", data::Split::test)};
  return data::generate(config::data_config(kv));
}

nn::Parameters<float> load_deployment(const std::string& bundle, const std::string& params, nn::NetworkSpec& spec) {
  if (!bundle.empty()) return deploy::read_bundle(bundle, &spec);
  if (!params.empty()) return deploy::read_params(params, spec).cast<float>();
  throw UsageError("one of --bundle or --params is required");
}

void write_predictions(const fs::path& path, const runtime::SimResult& res, const data::Dataset& test) {
  std::ofstream out(path, std::ios::binary);
  out << "request,outcome,at_us,target,prediction\n";
  for (std::size_t i = 0; i < res.predictions.size(); ++i) {
    const auto& p = res.predictions[i];
    out << i << ',' << runtime::to_string(p.outcome) << ',' << p.at << ',' << data::format_double(test.y[i]) << ',';
    for (std::size_t k = 0; k < p.outputs.size(); ++k)
      out << (k ? ";" : "") << data::format_double(static_cast<double>(p.outputs[k]));
    out << '\n';
  }
}

void write_recovery(const fs::path& path, const runtime::Trace& trace) {
  std::ofstream out(path, std::ios::binary);
  out << "subject,injected_ms,detection_ms,stabilization_ms,total_ms,censored\n";
  for (const auto& r : runtime::measure_recovery(trace))
    out << r.subject << ',' << runtime::format_ms(r.injected) << ',' << runtime::format_ms(r.detection) << ','
        << runtime::format_ms(r.stabilization) << ',' << runtime::format_ms(r.total()) << ','
        << (r.censored() ? "true" : "false") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-tolerant distributed MLP: data, training, deployment, simulation and experiments"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write train.csv, test.csv and dataset.meta");
  add_common(gen_cmd, gen);

  // train
  Common tr;
  std::string tr_data;
  auto* tr_cmd = app.add_subcommand("train", "train a network and write params.txt plus a training log");
  add_common(tr_cmd, tr);
  tr_cmd->add_option("--data", tr_data, "directory with train.csv and test.csv (default: generate)")
      ->check(CLI::ExistingDirectory);

  // deploy
  Common dep;
  std::string dep_params;
  auto* dep_cmd = app.add_subcommand("deploy", "write the per-neuron deployment bundle");
  add_common(dep_cmd, dep);
  dep_cmd->add_option("--params", dep_params, "params.txt from train")->required()->check(CLI::ExistingFile);

  // simulate
  Common sim;
  std::string sim_bundle, sim_params, sim_data, sim_faults = "none";
  std::size_t sim_count = 100;
  auto* sim_cmd = app.add_subcommand("simulate", "run a workload on the simulated cluster");
  add_common(sim_cmd, sim);
  sim_cmd->add_option("--bundle", sim_bundle, "deployment bundle directory")->check(CLI::ExistingDirectory);
  sim_cmd->add_option("--params", sim_params, "params.txt (alternative to --bundle)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--data", sim_data, "dataset directory (default: generate)")->check(CLI::ExistingDirectory);
  sim_cmd->add_option("--faults", sim_faults, "none | kill:L:N@t0 | kill:L:N@120ms | kill:coord:I@300ms, comma separated");
  sim_cmd->add_option("--count", sim_count, "number of test rows to submit");

  // node
  Common nd;
  std::string nd_bundle, nd_id;
  auto* nd_cmd = app.add_subcommand("node", "run one neuron node over UDP");
  add_common(nd_cmd, nd);
  nd_cmd->add_option("--bundle", nd_bundle, "deployment bundle directory")->required()->check(CLI::ExistingDirectory);
  nd_cmd->add_option("--id", nd_id, "node id LAYER:NEURON")->required();

  // coordinator
  Common co;
  std::size_t co_index = 0;
  double co_duration_ms = 0.0;
  auto* co_cmd = app.add_subcommand("coordinator", "run a coordinator over UDP; writes trace_c<I>.csv under --out");
  add_common(co_cmd, co);
  co_cmd->add_option("--index", co_index, "0 = primary, 1 = standby");
  co_cmd->add_option("--duration-ms", co_duration_ms, "stop after this long (0 = until signalled)");

  // inject
  Common inj;
  std::string inj_target;
  auto* inj_cmd = app.add_subcommand("inject", "send FAULT_INJECT to a live cluster member");
  add_common(inj_cmd, inj);
  inj_cmd->add_option("--target", inj_target, "LAYER:NEURON or coord:I")->required();

  // infer
  Common inf;
  std::string inf_data;
  std::size_t inf_count = 10;
  double inf_wait_ms = 5000.0;
  auto* inf_cmd = app.add_subcommand("infer", "submit test rows to a live cluster and print the answers");
  add_common(inf_cmd, inf);
  inf_cmd->add_option("--data", inf_data, "dataset directory (default: generate)")->check(CLI::ExistingDirectory);
  inf_cmd->add_option("--count", inf_count, "number of rows");
  inf_cmd->add_option("--wait-ms", inf_wait_ms, "how long to wait for answers");

  // sweep
  Common sw;
  std::string sw_params, sw_data;
  auto* sw_cmd = app.add_subcommand("sweep", "degradation table over k = 0..sweep.k_max");
  add_common(sw_cmd, sw);
  sw_cmd->add_option("--params", sw_params, "params.txt from train")->required()->check(CLI::ExistingFile);
  sw_cmd->add_option("--data", sw_data, "dataset directory (default: generate)")->check(CLI::ExistingDirectory);

  // experiment
  Common ex;
  std::string ex_name;
  auto* ex_cmd = app.add_subcommand("experiment", "run an experiment suite and write CSVs plus summary.md");
  add_common(ex_cmd, ex);
  ex_cmd->add_option("--name", ex_name, "all | degradation | dropout_vs_plain | recovery | disconnect");

  // report
  Common rp;
  std::string rp_in;
  auto* rp_cmd = app.add_subcommand("report", "render every CSV in a directory to report.md");
  add_common(rp_cmd, rp);
  rp_cmd->add_option("--in", rp_in, "directory with CSV files")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg.resize(nl);
    std::cerr << "ftmlp: error: " << msg << " (see --help)\n";
    return 2;
  }

  try {
    if (*gen_cmd) {
      auto kv = gen.kv();
      if (gen.seed) kv.set("data.seed", std::to_string(*gen.seed));
      const auto cfg = config::data_config(kv);
      const auto [train_set, test_set] = data::generate(cfg);
      data::write_dataset_dir(gen.out, cfg, train_set, test_set);
      std::cout << "wrote " << train_set.rows() << " train and " << test_set.rows() << " test rows to " << gen.out << "\n";
    } else if (*tr_cmd) {
      auto kv = tr.kv();
      if (tr.seed) kv.set("train.seed", std::to_string(*tr.seed));
      const auto tc = config::train_config(kv);
      const auto [train_set, test_set] = load_or_generate(tr_data, kv);
      const auto spec = config::network_spec(kv, train_set.dim);
      std::cout << train::config_echo(tc);
      const auto result = train::train(train_set, spec, tc, &test_set);
      fs::create_directories(tr.out);
      deploy::write_params(fs::path(tr.out) / "params.txt", spec, result.params);
      std::ofstream log(fs::path(tr.out) / "train_log.csv", std::ios::binary);
      train::write_log_csv(log, result.log);
      KeyValues eff;
      if (tr_data.empty()) config::echo(eff, config::data_config(kv));
      config::echo(eff, spec);
      config::echo(eff, tc);
      suite::write_text(fs::path(tr.out) / "effective.cfg", eff.dump());
      std::cout << "final train_loss=" << data::format_double(result.log.epochs.back().train_loss)
                << " test_mse=" << data::format_double(*result.log.epochs.back().val_loss) << "\n";
    } else if (*dep_cmd) {
      nn::NetworkSpec spec;
      const auto params = deploy::read_params(dep_params, spec);
      deploy::write_bundle(dep.out, spec, params);
      std::cout << "wrote " << deploy::node_count(spec) << " node blobs and manifest.txt to " << dep.out << "\n";
    } else if (*sim_cmd) {
      auto kv = sim.kv();
      nn::NetworkSpec spec;
      const auto params = load_deployment(sim_bundle, sim_params, spec);
      const auto cfg = config::sim_config(kv);
      const auto faults = runtime::parse_fault_schedule(sim_faults);
      const auto [train_set, test_set] = load_or_generate(sim_data, kv);
      if (sim_count == 0 || sim_count > test_set.rows()) throw UsageError("--count must be in [1, test rows]");
      const auto w = runtime::Workload::from_rows(test_set, sim_count);
      const std::uint64_t seed = sim.seed.value_or(kv.integer("sim.seed", 11));
      const auto res = runtime::run_simulation(cfg, spec, params, w, faults, seed);
      fs::create_directories(sim.out);
      write_predictions(fs::path(sim.out) / "predictions.csv", res, test_set);
      std::ofstream trace(fs::path(sim.out) / "trace.csv", std::ios::binary);
      runtime::write_trace_csv(trace, res.trace);
      write_recovery(fs::path(sim.out) / "recovery.csv", res.trace);
      std::size_t counted = 0;
      const double mse = suite::mse_over(res.predictions, test_set, 0, &counted);
      std::cout << "ok=" << res.count(runtime::Outcome::ok) << " failed=" << res.count(runtime::Outcome::failed)
                << " unanswered=" << res.count(runtime::Outcome::unanswered) << " mse=" << data::format_double(mse)
                << "\n";
    } else if (*nd_cmd) {
      if (nd.config.empty()) throw UsageError("--config <cluster file> is required");
      install_signal_handlers();
      const auto cluster = runtime::ClusterConfig::load(nd.config);
      const auto id = deploy::parse_node_id(nd_id);
      if (deploy::read_manifest_spec(nd_bundle) != cluster.spec)
        throw ConfigError("bundle network does not match the cluster file");
      auto params = deploy::read_neuron(nd_bundle, id);
      runtime::run_node(cluster, id, std::move(params), g_stop);
    } else if (*co_cmd) {
      if (co.config.empty()) throw UsageError("--config <cluster file> is required");
      install_signal_handlers();
      const auto cluster = runtime::ClusterConfig::load(co.config);
      fs::create_directories(co.out);
      std::ofstream trace(fs::path(co.out) / ("trace_c" + std::to_string(co_index) + ".csv"), std::ios::binary);
      runtime::write_trace_header(trace);
      trace.flush();
      std::unique_ptr<std::thread> timer;
      if (co_duration_ms > 0) {
        timer = std::make_unique<std::thread>([co_duration_ms] {
          const auto end = std::chrono::steady_clock::now() + std::chrono::microseconds(static_cast<std::int64_t>(co_duration_ms * 1000));
          while (!g_stop.load() && std::chrono::steady_clock::now() < end) std::this_thread::sleep_for(std::chrono::milliseconds(10));
          g_stop.store(true);
        });
      }
      runtime::run_coordinator(cluster, co_index, g_stop, [&](const runtime::TraceEvent& e) {
        runtime::write_trace_line(trace, e);
        trace.flush();
      });
      g_stop.store(true);
      if (timer) timer->join();
    } else if (*inj_cmd) {
      if (inj.config.empty()) throw UsageError("--config <cluster file> is required");
      const auto cluster = runtime::ClusterConfig::load(inj.config);
      runtime::Client client(cluster);
      if (inj_target.starts_with("coord:")) {
        const auto idx = parse_uint_list(inj_target.substr(6)).at(0);
        if (idx >= cluster.coordinators.size()) throw ConfigError("unknown coordinator " + inj_target);
        client.inject(cluster.coordinators[idx], wire::kCoordinatorLayer, static_cast<std::uint8_t>(idx));
      } else {
        const auto id = deploy::parse_node_id(inj_target);
        const auto idx = deploy::node_index(cluster.spec, id);
        client.inject(cluster.nodes[idx], static_cast<std::uint8_t>(id.layer), static_cast<std::uint8_t>(id.neuron));
      }
      std::cout << "sent FAULT_INJECT to " << inj_target << "\n";
    } else if (*inf_cmd) {
      if (inf.config.empty()) throw UsageError("--config <cluster file> is required");
      const auto cluster = runtime::ClusterConfig::load(inf.config);
      const auto [train_set, test_set] = load_or_generate(inf_data, KeyValues{});
      if (inf_count == 0 || inf_count > test_set.rows()) throw UsageError("--count must be in [1, test rows]");
      runtime::Client client(cluster);
      for (std::size_t i = 0; i < inf_count; ++i) {
        const auto row = test_set.row(i);
        std::vector<float> x(row.begin(), row.end());
        client.submit(static_cast<std::uint32_t>(i), x);
      }
      const auto answers = client.collect(inf_count, static_cast<runtime::Micros>(inf_wait_ms * 1000));
      std::cout << "request,outcome,target,prediction\n";
      for (std::size_t i = 0; i < inf_count; ++i) {
        auto it = answers.find(static_cast<std::uint32_t>(i));
        std::cout << i << ',' << (it == answers.end() ? "unanswered" : it->second.ok ? "ok" : "failed") << ','
                  << data::format_double(test_set.y[i]) << ',';
        if (it != answers.end() && !it->second.outputs.empty())
          std::cout << data::format_double(static_cast<double>(it->second.outputs[0]));
        std::cout << '\n';
      }
      if (answers.size() < inf_count) return 1;
    } else if (*sw_cmd) {
      auto kv = sw.kv();
      nn::NetworkSpec spec;
      const auto params = deploy::read_params(sw_params, spec);
      const auto [train_set, test_set] = load_or_generate(sw_data, kv);
      fault::SweepOptions opt;
      opt.trials = kv.integer("sweep.trials", 100);
      opt.permutations = kv.integer("sweep.permutations", fault::kDefaultPermutations);
      if (auto l = kv.get("sweep.layer")) opt.layer = parse_uint_list(*l).at(0);
      Rng rng(sw.seed.value_or(kv.integer("sweep.seed", 7)));
      const auto rows = fault::degradation_sweep(spec, params, test_set, suite::k_range(kv.integer("sweep.k_max", 7)), rng, opt);
      fs::create_directories(sw.out);
      std::ostringstream csv;
      fault::write_rows_csv(csv, rows);
      suite::write_text(fs::path(sw.out) / "degradation.csv", csv.str());
      std::cout << csv.str();
    } else if (*ex_cmd) {
      auto kv = ex.kv();
      if (ex.seed) kv.set("seeds", join(std::vector<std::uint64_t>{*ex.seed, *ex.seed + 1, *ex.seed + 2}));
      if (!ex_name.empty()) kv.set("experiment", ex_name);
      const auto cfg = suite::ExperimentConfig::from(kv);
      const auto rep = suite::run_experiment_suite(cfg, ex.out);
      for (const auto& f : rep.files) std::cout << "wrote " << (fs::path(ex.out) / f).string() << "\n";
    } else if (*rp_cmd) {
      const auto md = suite::render_report(rp_in);
      fs::create_directories(rp.out);
      suite::write_text(fs::path(rp.out) / "report.md", md);
      std::cout << md;
    }
  } catch (const UsageError& e) {
    std::cerr << "ftmlp: error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "ftmlp: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ftmlp: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
