// dblp: run a simulated experiment, or one role of a socket deployment.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dblp/error.hpp"
#include "dblp/experiment.hpp"
#include "dblp/log.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Flags {
  std::string config;
  std::string mode;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::optional<std::size_t> workers;
  std::string out;
  std::string listen;
  std::string connect;
  bool list_presets = false;
  bool print_config = false;
};

dblp::ExperimentConfig build_config(const Flags& f) {
  dblp::ExperimentConfig c = f.preset.empty() ? dblp::ExperimentConfig{} : dblp::preset(f.preset);
  if (!f.config.empty()) c = dblp::load_config(f.config, c);
  if (!f.mode.empty()) c.mode = dblp::parse_run_mode(f.mode);
  if (f.seed) c.seed = *f.seed;
  if (f.steps) {
    // A preset's norm profile is sized for its own run length.
    if (*f.steps != c.steps && c.workload == dblp::WorkloadKind::Synthetic && !c.norms.segments().empty()) {
      const auto& segs = c.norms.segments();
      std::vector<dblp::NormSegment> trimmed;
      for (auto s : segs) {
        if (s.first >= *f.steps) break;
        trimmed.push_back(s);
      }
      if (!trimmed.empty()) {
        trimmed.back().last = *f.steps - 1;
        c.norms = dblp::NormProfile(trimmed);
      }
    }
    c.steps = *f.steps;
  }
  if (f.workers) c.workers = *f.workers;
  if (!f.out.empty()) c.output = f.out;
  if (!f.listen.empty()) c.listen = dblp::parse_endpoint(f.listen);
  if (!f.connect.empty()) c.connect = dblp::parse_endpoint(f.connect);
  c.validate();
  return c;
}

void print_outcome(const dblp::ExperimentConfig& c, const dblp::RunOutcome& o) {
  const auto& s = o.summary;
  fmt::print("{} steps, {} workers, {} clr steps\n", c.steps, c.workers, o.clr_steps);
  fmt::print("worker->server latency: average {:.6f} s, p99 {:.6f} s, tail {:.6f} s\n", s.average_s, s.p99_s,
             s.tail_s);
  if (s.comparison_average_s) {
    fmt::print("baseline:               average {:.6f} s, tail {:.6f} s\n", *s.comparison_average_s,
               *s.comparison_tail_s);
    fmt::print("speedup:                average {:.3f}x, tail {:.3f}x\n", *s.average_speedup, *s.tail_speedup);
  }
  for (const auto& b : s.bursts) {
    fmt::print("burst round {}: {:.6f} s", b.round, b.latency_s);
    if (b.speedup) fmt::print(" (baseline {:.6f} s, {:.3f}x)", *b.comparison_s, *b.speedup);
    fmt::print("\n");
  }
  if (o.accuracy) fmt::print("train accuracy: {:.4f}\n", *o.accuracy);
  fmt::print("artifacts in {}\n", c.output);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Every round allocates megabyte-sized buffers; keep them on the heap
  // instead of paying an mmap/munmap and fresh page faults each time.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  dblp::init_logging();

  CLI::App app{"Bounded-loss gradient transport experiments"};
  Flags f;
  app.add_option("--config", f.config, "INI config file, applied on top of --preset")->check(CLI::ExistingFile);
  app.add_option("--mode", f.mode, "simulate, server, or worker");
  app.add_option("--preset", f.preset, "Start from a shipped preset");
  app.add_option("--seed", f.seed, "Seed for every random stream");
  app.add_option("--steps", f.steps, "Training steps");
  app.add_option("--workers", f.workers, "Number of workers");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--listen", f.listen, "Server control address host:port");
  app.add_option("--connect", f.connect, "Worker: server control address host:port");
  app.add_flag("--list-presets", f.list_presets, "Print preset names and exit");
  app.add_flag("--print-config", f.print_config, "Print the resolved config as INI and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (f.list_presets) {
    for (const auto& name : dblp::preset_names()) fmt::print("{}\n", name);
    return 0;
  }

  dblp::ExperimentConfig config;
  try {
    config = build_config(f);
  } catch (const dblp::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  }
  if (f.print_config) {
    fmt::print("{}", dblp::to_ini(config));
    return 0;
  }

  try {
    switch (config.mode) {
      case dblp::RunMode::Simulate: {
        const auto outcome = dblp::run_simulation(config);
        dblp::write_artifacts(config, outcome);
        print_outcome(config, outcome);
        break;
      }
      case dblp::RunMode::Server:
        dblp::run_server_role(config);
        fmt::print("server finished; metrics in {}\n", config.output);
        break;
      case dblp::RunMode::Worker:
        dblp::run_worker_role(config);
        fmt::print("worker finished; metrics in {}\n", config.output);
        break;
    }
  } catch (const dblp::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "run failed: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
