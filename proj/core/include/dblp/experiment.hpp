#pragma once

// Experiment configuration, presets, and the simulate-mode runner.
//
// Config files are INI with sections [run] [tolerance] [loss] [link]
// [workload] [toy] [transport] [socket]; see README.md for every key.
// Unknown sections or keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dblp/clr.hpp"
#include "dblp/cluster.hpp"
#include "dblp/lossnet.hpp"
#include "dblp/metrics.hpp"
#include "dblp/socket_channel.hpp"
#include "dblp/transport.hpp"
#include "dblp/workload.hpp"

namespace dblp {

enum class RunMode { Simulate, Server, Worker };
enum class WorkloadKind { Synthetic, Toy };

std::string_view to_string(RunMode m);
RunMode parse_run_mode(std::string_view text);
std::string_view to_string(WorkloadKind k);
WorkloadKind parse_workload_kind(std::string_view text);

struct ExperimentConfig {
  // [run]
  RunMode mode = RunMode::Simulate;
  std::string preset;  // name the config started from, informational
  std::size_t workers = 3;
  std::uint64_t steps = 100;
  std::uint64_t seed = 1;
  std::string output = "dblp-out";

  // [tolerance]
  bool adaptive = true;
  ScheduleParams schedule;
  double fixed = 0.008;                // used when adaptive is false
  std::optional<double> baseline;      // also run a fixed-tolerance comparison

  // [loss]
  double base_loss = 0.0;
  std::vector<Burst> bursts;
  LossModel loss_model = LossModel::Exact;

  // [link]
  LinkProfile link;
  SimTime jitter{0};
  SimTime compute_time{0};

  // [workload]
  WorkloadKind workload = WorkloadKind::Synthetic;
  TensorLayout layout{{"grad", 346'500}};
  NormProfile norms;  // empty: constant 1.0 over the run
  float learning_rate = 0.1f;

  // [toy]
  ToyParams toy;

  // [transport]
  TransportConfig transport;

  // [socket]
  Endpoint listen{"127.0.0.1", 47000};
  Endpoint connect{"127.0.0.1", 47000};

  /// Throws ConfigError.
  void validate() const;

  LossSchedule loss_schedule() const;
  TolerancePolicy policy() const;
  NormProfile effective_norms() const;
};

/// Names accepted by preset().
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ExperimentConfig preset(std::string_view name);

/// Overlays INI text onto `base`. Throws ConfigError.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// INI text that parse_config() maps back to the same configuration.
std::string to_ini(const ExperimentConfig& config);

struct RunOutcome {
  std::vector<RoundMetrics> records;
  std::vector<RoundMetrics> baseline_records;
  LatencySummary summary;  // worker -> server, against the baseline if any
  std::optional<double> accuracy;           // toy workload only
  std::optional<double> baseline_accuracy;
  std::uint64_t clr_steps = 0;  // steps whose broadcast ran inside a CLR window
};

/// Runs the simulated cluster for config.steps steps under `policy`.
std::vector<RoundMetrics> simulate_run(const ExperimentConfig& config, const TolerancePolicy& policy,
                                       std::optional<double>* accuracy = nullptr);

/// Simulate mode: the configured run plus the optional baseline.
RunOutcome run_simulation(const ExperimentConfig& config);

/// Writes metrics.csv, baseline.csv (if any), summary.txt and manifest.ini
/// into config.output.
void write_artifacts(const ExperimentConfig& config, const RunOutcome& outcome);

/// Socket roles. The worker and server write their own metrics files.
void run_server_role(const ExperimentConfig& config);
void run_worker_role(const ExperimentConfig& config);

}  // namespace dblp
