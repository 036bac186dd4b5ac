// fedlp: run layer-wise pruned federated learning experiments, check the
// pruned-aggregate expectation identity, and inspect client partitions.
//
//   fedlp run <config> --seed=N [--key=value ...]
//   fedlp verify-prop1 --k=K --p=P [--trials=T] --seed=N [--workers=W]
//   fedlp partition-stats <config> --seed=N [--key=value ...]
//
// Exit codes: 0 success, 1 runtime failure (or verifier mismatch), 2 usage or
// configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "fedlp/fedlp.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Leftover "--key=value" / "--key" arguments become config overrides.
bool collect_overrides(const std::vector<std::string>& extras, Overrides& out) {
  bool ok = true;
  for (const auto& arg : extras) {
    if (arg.rfind("--", 0) != 0 || arg.size() < 3) {
      std::cerr << "error: unexpected argument '" << arg << "'\n";
      ok = false;
      continue;
    }
    const auto eq = arg.find('=');
    if (eq == std::string::npos) out.emplace_back(arg.substr(2), "true");
    else out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
  return ok;
}

void print_config_error(const fedlp::ConfigError& e) {
  std::cerr << "configuration error (" << e.problems().size() << " problem"
            << (e.problems().size() == 1 ? "" : "s") << "):\n";
  for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
}

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

const char* scheme_label(const fedlp::RunConfig& rc) {
  switch (rc.experiment.scheme) {
    case fedlp::Scheme::fedavg: return "FedAvg";
    case fedlp::Scheme::fedlp_homo: return "FedLP-Homo";
    case fedlp::Scheme::fedlp_hetero: return "FedLP-Hetero";
  }
  return "?";
}

int cmd_run(const std::string& config_path, std::uint64_t seed, const Overrides& overrides,
            const std::string& command_line) {
  fedlp::RunConfig rc;
  std::pair<fedlp::Dataset, fedlp::Dataset> data;
  try {
    rc = fedlp::load_run_config(config_path, overrides, seed);
    data = fedlp::load_data(rc);
    const auto errs = rc.experiment.validate_against(data.first, data.second);
    if (!errs.empty()) throw fedlp::ConfigError(errs);
  } catch (const fedlp::ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const fedlp::DataError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fedlp::IoError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fedlp::Simulation sim(rc.experiment, std::move(data.first), std::move(data.second));
    std::vector<fedlp::RoundMetrics> rounds;
    while (!sim.finished()) {
      rounds.push_back(sim.run_round());
      if (!sim.last_trace().skipped.empty())
        std::cerr << "warning: round " << sim.last_trace().round << ": " << sim.last_trace().skipped.size()
                  << " participant(s) skipped, empty shard\n";
    }
    fedlp::emit_csv(rounds, rc.output.csv);
    {
      std::ofstream manifest(rc.manifest_path(), std::ios::binary | std::ios::trunc);
      if (!manifest) throw fedlp::IoError("cannot write " + rc.manifest_path().string());
      manifest << fedlp::manifest_text(rc, command_line);
    }

    const auto& last = rounds.back();
    const auto& comm = sim.comm();
    double mflops = 0.0;
    for (const auto& c : sim.clients()) mflops += static_cast<double>(fedlp::flops_count(c.model));
    mflops /= 1e6 * static_cast<double>(sim.clients().size());

    std::printf("%-14s %10s %18s %14s\n", "scheme", "acc(%)", "comm/epoch(k)", "MFLOPs/model");
    std::printf("%-14s %10.2f %18.2f %14.4f\n", scheme_label(rc), 100.0 * last.test_accuracy,
                comm.mean_per_round() / 1000.0, mflops);
    std::printf("round=%zu acc=%.6f up=%llu down=%llu\n", last.round, last.test_accuracy,
                static_cast<unsigned long long>(comm.total_upload()),
                static_cast<unsigned long long>(comm.total_download()));
    return 0;
  } catch (const fedlp::ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_partition_stats(const std::string& config_path, std::uint64_t seed, const Overrides& overrides) {
  try {
    const auto rc = fedlp::load_run_config(config_path, overrides, seed);
    const auto [train, test] = fedlp::load_data(rc);
    const auto errs = rc.experiment.validate_against(train, test);
    if (!errs.empty()) throw fedlp::ConfigError(errs);
    const auto partition = fedlp::make_partition(train, rc.experiment.resolved_partition());

    std::printf("client,count");
    for (std::size_t c = 0; c < train.num_classes; ++c) std::printf(",class_%zu", c);
    std::printf("\n");
    for (std::size_t k = 0; k < partition.num_clients(); ++k) {
      const auto& idx = partition.assignments[k];
      std::printf("%zu,%zu", k, idx.size());
      for (std::size_t n : train.class_histogram(idx)) std::printf(",%zu", n);
      std::printf("\n");
    }
    std::printf("total,%zu\n", partition.total());
    return 0;
  } catch (const fedlp::ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const fedlp::DataError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fedlp::IoError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_verify_prop1(long long k, double p, long long trials, std::uint64_t seed, unsigned workers) {
  std::vector<std::string> problems;
  if (k < 1) problems.emplace_back("--k must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) problems.emplace_back("--p must be in [0, 1]");
  if (trials < 1) problems.emplace_back("--trials must be >= 1");
  if (workers < 1) problems.emplace_back("--workers must be >= 1");
  if (!problems.empty()) {
    print_config_error(fedlp::ConfigError(problems));
    return kExitConfig;
  }
  fedlp::Prop1Options opt;
  opt.workers = workers;
  const auto r = fedlp::verify_prop1(static_cast<std::size_t>(k), p, static_cast<std::size_t>(trials), seed, opt);
  std::printf("K=%zu\np=%.10g\ntrials=%zu\nempirical_ratio=%.10f\nclosed_form=%.10f\nabs_error=%.3e\nstd_error=%.3e\n",
              r.K, r.p, r.trials, r.empirical_ratio, r.closed_form, r.abs_error, r.std_error);
  std::printf("verdict=%s\n", r.consistent() ? "consistent" : "MISMATCH");
  return r.consistent() ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise pruned federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics CSV + manifest");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Master seed")->required();
  run->allow_extras();

  std::string stats_config;
  std::uint64_t stats_seed = 0;
  auto* stats = app.add_subcommand("partition-stats", "Print per-client sample counts and class histograms");
  stats->add_option("config", stats_config, "Config file")->required();
  stats->add_option("--seed", stats_seed, "Master seed")->required();
  stats->allow_extras();

  long long k = 0;
  double p = 0.0;
  long long trials = 1000000;
  std::uint64_t verify_seed = 0;
  unsigned workers = 1;
  auto* verify = app.add_subcommand("verify-prop1", "Monte-Carlo check of the 1-(1-p)^K aggregate scale");
  verify->add_option("--k", k, "Participants per round")->required();
  verify->add_option("--p", p, "Layer-preserving rate")->required();
  verify->add_option("--trials", trials, "Monte-Carlo trials");
  verify->add_option("--seed", verify_seed, "Master seed")->required();
  verify->add_option("--workers", workers, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (run->parsed()) {
    Overrides overrides;
    if (!collect_overrides(run->remaining(), overrides)) return kExitConfig;
    return cmd_run(config_path, seed, overrides, join_args(argc, argv));
  }
  if (stats->parsed()) {
    Overrides overrides;
    if (!collect_overrides(stats->remaining(), overrides)) return kExitConfig;
    return cmd_partition_stats(stats_config, stats_seed, overrides);
  }
  return cmd_verify_prop1(k, p, trials, verify_seed, workers);
}
