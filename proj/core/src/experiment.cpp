#include "dblp/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dblp/error.hpp"
#include "dblp/socket_roles.hpp"

namespace dblp {
namespace {

namespace pt = boost::property_tree;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto at = s.find(sep);
    auto piece = trim(s.substr(0, at));
    if (!piece.empty()) out.push_back(piece);
    if (at == std::string_view::npos) break;
    s.remove_prefix(at + 1);
  }
  return out;
}

template <typename T>
T to_int(std::string_view text, std::string_view key) {
  T v{};
  text = trim(text);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, text));
  }
  return v;
}

double to_real(std::string_view text, std::string_view key) {
  const std::string s(trim(text));
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, s));
}

std::vector<Burst> parse_bursts(std::string_view text) {
  std::vector<Burst> out;
  for (auto entry : split(text, ',')) {
    const auto colon = entry.find(':');
    if (colon == std::string_view::npos) throw ConfigError(fmt::format("burst '{}' is not round:rate", entry));
    out.push_back({to_int<std::uint64_t>(entry.substr(0, colon), "loss.bursts"),
                   to_real(entry.substr(colon + 1), "loss.bursts")});
  }
  return out;
}

std::string format_bursts(const std::vector<Burst>& bursts) {
  std::string out;
  for (const auto& b : bursts) out += fmt::format("{}{}:{}", out.empty() ? "" : ",", b.round, b.loss_rate);
  return out;
}

TensorLayout parse_layout(std::string_view text) {
  TensorLayout out;
  for (auto entry : split(text, ',')) {
    const auto colon = entry.rfind(':');
    if (colon == std::string_view::npos) throw ConfigError(fmt::format("tensor '{}' is not name:count", entry));
    out.push_back({std::string(trim(entry.substr(0, colon))),
                   to_int<std::uint64_t>(entry.substr(colon + 1), "workload.layout")});
  }
  return out;
}

std::string format_layout(const TensorLayout& layout) {
  std::string out;
  for (const auto& t : layout) out += fmt::format("{}{}:{}", out.empty() ? "" : ",", t.name, t.element_count);
  return out;
}

std::string format_endpoint(const Endpoint& e) { return fmt::format("{}:{}", e.host, e.port); }

// Walks a parsed INI tree, applying known keys and rejecting the rest.
class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(fmt::format("key '{}' must be inside a section", section));
      }
      for (const auto& [key, value] : body) unused_.insert(section + "." + key);
    }
  }

  template <typename F>
  void on(const std::string& path, F&& apply) {
    if (auto v = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'))) {
      unused_.erase(path);
      apply(std::string_view(*v), path);
    }
  }

  void finish() const {
    if (!unused_.empty()) throw ConfigError(fmt::format("unknown config key '{}'", *unused_.begin()));
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> unused_;
};

std::uint64_t derive(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return counter_hash(seed, static_cast<std::uint64_t>(stream), index, 0);
}

ToyParams toy_params(const ExperimentConfig& c) {
  ToyParams p = c.toy;
  p.init_seed = derive(c.seed, Stream::Init, 0);
  return p;
}

std::vector<std::unique_ptr<GradientSource>> make_sources(const ExperimentConfig& c) {
  std::vector<std::unique_ptr<GradientSource>> out;
  const auto norms = c.effective_norms();
  for (std::size_t i = 0; i < c.workers; ++i) {
    if (c.workload == WorkloadKind::Toy) {
      out.push_back(std::make_unique<ToySource>(toy_params(c), derive(c.seed, Stream::Dataset, i)));
    } else {
      out.push_back(std::make_unique<SyntheticSource>(c.layout, norms, derive(c.seed, Stream::Gradient, i)));
    }
  }
  return out;
}

TensorLayout workload_layout(const ExperimentConfig& c) {
  if (c.workload == WorkloadKind::Toy) return ToyModel{c.toy.classes, c.toy.features, {}, {}}.layout();
  return c.layout;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("write to {} failed", path.string()));
}

}  // namespace

std::string_view to_string(RunMode m) {
  switch (m) {
    case RunMode::Simulate: return "simulate";
    case RunMode::Server: return "server";
    case RunMode::Worker: return "worker";
  }
  return "?";
}

RunMode parse_run_mode(std::string_view text) {
  if (text == "simulate") return RunMode::Simulate;
  if (text == "server") return RunMode::Server;
  if (text == "worker") return RunMode::Worker;
  throw ConfigError(fmt::format("unknown mode '{}' (simulate, server, worker)", text));
}

std::string_view to_string(WorkloadKind k) { return k == WorkloadKind::Toy ? "toy" : "synthetic"; }

WorkloadKind parse_workload_kind(std::string_view text) {
  if (text == "synthetic") return WorkloadKind::Synthetic;
  if (text == "toy") return WorkloadKind::Toy;
  throw ConfigError(fmt::format("unknown workload '{}' (synthetic, toy)", text));
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (adaptive) {
    schedule.validate();
  } else if (!(fixed >= 0.0 && fixed < 1.0)) {
    throw ConfigError(fmt::format("fixed tolerance {} outside [0, 1)", fixed));
  }
  if (baseline && !(*baseline >= 0.0 && *baseline < 1.0)) {
    throw ConfigError(fmt::format("baseline tolerance {} outside [0, 1)", *baseline));
  }
  loss_schedule().validate();
  if (!(link.bandwidth_bps > 0.0)) throw ConfigError("link bandwidth must be positive");
  if (link.propagation.count() < 0 || link.control_latency.count() < 0 || jitter.count() < 0 ||
      compute_time.count() < 0) {
    throw ConfigError("link delays must be non-negative");
  }
  if (transport.probe_timeout.count() <= 0 || transport.recv_timeout.count() <= 0) {
    throw ConfigError("transport timeouts must be positive");
  }
  if (transport.max_probe_retries < 0) throw ConfigError("max_probe_retries must be non-negative");
  if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
  if (workload == WorkloadKind::Synthetic) {
    effective_norms().require_coverage(steps);
  } else {
    if (toy.batch == 0 || toy.examples_per_worker == 0) throw ConfigError("toy batch and examples must be positive");
    if (toy.classes < 2 || toy.classes > 2 * toy.features) {
      throw ConfigError("toy needs 2 <= classes <= 2 * features");
    }
  }
  make_announcement(workload_layout(*this), transport.max_payload_bytes);
}

LossSchedule ExperimentConfig::loss_schedule() const { return {base_loss, bursts, seed}; }

TolerancePolicy ExperimentConfig::policy() const {
  return adaptive ? TolerancePolicy::adaptive(schedule) : TolerancePolicy::fixed(fixed);
}

NormProfile ExperimentConfig::effective_norms() const {
  return norms.segments().empty() ? NormProfile::constant(1.0, steps) : norms;
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"microburst-effnet", "microburst-resnet", "background-loss", "toy-convergence"};
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  // 346,500 floats = 1000 chunks of 1386 bytes.
  c.layout = {{"grad", 346'500}};
  c.loss_model = LossModel::Exact;
  if (name == "microburst-effnet") {
    c.steps = 930;
    c.schedule = {0.008, 0.408, 0.5, 10, ClrCompare::CheckStep};
    c.baseline = 0.008;
    c.bursts = {{279, 0.7}, {651, 0.7}};
    c.norms = NormProfile::parse("0-19:10,20-929:4");
  } else if (name == "microburst-resnet") {
    c.steps = 1395;
    c.schedule = {0.024, 0.424, 0.5, 10, ClrCompare::CheckStep};
    c.baseline = 0.024;
    c.bursts = {{372, 0.7}, {651, 0.7}, {1209, 0.7}};
    c.norms = NormProfile::parse("0-19:10,20-1394:4");
  } else if (name == "background-loss") {
    c.steps = 500;
    c.schedule = {0.008, 0.408, 0.5, 10, ClrCompare::CheckStep};
    c.baseline = 0.008;
    c.base_loss = 0.05;
    c.norms = NormProfile::constant(1.0, 500);
  } else if (name == "toy-convergence") {
    c.steps = 300;
    c.workload = WorkloadKind::Toy;
    c.learning_rate = 0.5f;
    c.schedule = {0.008, 0.40, 0.5, 10, ClrCompare::CheckStep};
    c.baseline.reset();
    c.base_loss = 0.2;
    c.loss_model = LossModel::Bernoulli;
    // 33 floats in 8-byte chunks: 17 chunks, so loss lands inside the model.
    c.transport.max_payload_bytes = 8;
  } else {
    throw ConfigError(fmt::format("unknown preset '{}'", name));
  }
  return c;
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig c) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  Reader r(tree);
  r.on("run.mode", [&](auto v, auto) { c.mode = parse_run_mode(v); });
  r.on("run.preset", [&](auto v, auto) { c.preset = std::string(v); });
  r.on("run.workers", [&](auto v, auto k) { c.workers = to_int<std::size_t>(v, k); });
  r.on("run.steps", [&](auto v, auto k) { c.steps = to_int<std::uint64_t>(v, k); });
  r.on("run.seed", [&](auto v, auto k) { c.seed = to_int<std::uint64_t>(v, k); });
  r.on("run.output", [&](auto v, auto) { c.output = std::string(v); });

  r.on("tolerance.policy", [&](auto v, auto k) {
    if (v == "adaptive") {
      c.adaptive = true;
    } else if (v == "fixed") {
      c.adaptive = false;
    } else {
      throw ConfigError(fmt::format("{}: expected adaptive or fixed, got '{}'", k, v));
    }
  });
  r.on("tolerance.p_low", [&](auto v, auto k) { c.schedule.p_low = to_real(v, k); });
  r.on("tolerance.p_high", [&](auto v, auto k) { c.schedule.p_high = to_real(v, k); });
  r.on("tolerance.eta", [&](auto v, auto k) { c.schedule.eta = to_real(v, k); });
  r.on("tolerance.freq", [&](auto v, auto k) { c.schedule.freq = to_int<std::uint64_t>(v, k); });
  r.on("tolerance.compare", [&](auto v, auto) { c.schedule.compare = parse_clr_compare(v); });
  r.on("tolerance.fixed", [&](auto v, auto k) { c.fixed = to_real(v, k); });
  r.on("tolerance.baseline", [&](auto v, auto k) {
    if (v == "none" || v.empty()) {
      c.baseline.reset();
    } else {
      c.baseline = to_real(v, k);
    }
  });

  r.on("loss.base", [&](auto v, auto k) { c.base_loss = to_real(v, k); });
  r.on("loss.bursts", [&](auto v, auto) { c.bursts = parse_bursts(v); });
  r.on("loss.model", [&](auto v, auto) { c.loss_model = parse_loss_model(v); });

  r.on("link.bandwidth_bps", [&](auto v, auto k) { c.link.bandwidth_bps = to_real(v, k); });
  r.on("link.propagation_ns", [&](auto v, auto k) { c.link.propagation = SimTime(to_int<std::int64_t>(v, k)); });
  r.on("link.control_latency_ns",
       [&](auto v, auto k) { c.link.control_latency = SimTime(to_int<std::int64_t>(v, k)); });
  r.on("link.jitter_ns", [&](auto v, auto k) { c.jitter = SimTime(to_int<std::int64_t>(v, k)); });
  r.on("link.compute_ns", [&](auto v, auto k) { c.compute_time = SimTime(to_int<std::int64_t>(v, k)); });

  r.on("workload.kind", [&](auto v, auto) { c.workload = parse_workload_kind(v); });
  r.on("workload.layout", [&](auto v, auto) { c.layout = parse_layout(v); });
  r.on("workload.norms", [&](auto v, auto) {
    c.norms = (v == "constant" || v.empty()) ? NormProfile{} : NormProfile::parse(v);
  });
  r.on("workload.learning_rate", [&](auto v, auto k) { c.learning_rate = static_cast<float>(to_real(v, k)); });

  r.on("toy.classes", [&](auto v, auto k) { c.toy.classes = to_int<std::size_t>(v, k); });
  r.on("toy.features", [&](auto v, auto k) { c.toy.features = to_int<std::size_t>(v, k); });
  r.on("toy.examples_per_worker", [&](auto v, auto k) { c.toy.examples_per_worker = to_int<std::size_t>(v, k); });
  r.on("toy.batch", [&](auto v, auto k) { c.toy.batch = to_int<std::size_t>(v, k); });
  r.on("toy.separation", [&](auto v, auto k) { c.toy.separation = to_real(v, k); });

  r.on("transport.max_payload_bytes",
       [&](auto v, auto k) { c.transport.max_payload_bytes = to_int<std::size_t>(v, k); });
  r.on("transport.probe_timeout_ms",
       [&](auto v, auto k) { c.transport.probe_timeout = std::chrono::milliseconds(to_int<std::int64_t>(v, k)); });
  r.on("transport.max_probe_retries", [&](auto v, auto k) { c.transport.max_probe_retries = to_int<int>(v, k); });
  r.on("transport.recv_timeout_ms",
       [&](auto v, auto k) { c.transport.recv_timeout = std::chrono::milliseconds(to_int<std::int64_t>(v, k)); });

  r.on("socket.listen", [&](auto v, auto) { c.listen = parse_endpoint(std::string(v)); });
  r.on("socket.connect", [&](auto v, auto) { c.connect = parse_endpoint(std::string(v)); });
  r.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path));
  return parse_config(in, std::move(base));
}

std::string to_ini(const ExperimentConfig& c) {
  std::string out;
  auto section = [&](std::string_view name) { out += fmt::format("{}[{}]\n", out.empty() ? "" : "\n", name); };
  auto key = [&](std::string_view k, const auto& v) { out += fmt::format("{} = {}\n", k, v); };

  section("run");
  key("mode", to_string(c.mode));
  if (!c.preset.empty()) key("preset", c.preset);
  key("workers", c.workers);
  key("steps", c.steps);
  key("seed", c.seed);
  key("output", c.output);

  section("tolerance");
  key("policy", c.adaptive ? "adaptive" : "fixed");
  key("p_low", c.schedule.p_low);
  key("p_high", c.schedule.p_high);
  key("eta", c.schedule.eta);
  key("freq", c.schedule.freq);
  key("compare", to_string(c.schedule.compare));
  key("fixed", c.fixed);
  key("baseline", c.baseline ? fmt::format("{}", *c.baseline) : std::string("none"));

  section("loss");
  key("base", c.base_loss);
  key("bursts", format_bursts(c.bursts));
  key("model", to_string(c.loss_model));

  section("link");
  key("bandwidth_bps", c.link.bandwidth_bps);
  key("propagation_ns", c.link.propagation.count());
  key("control_latency_ns", c.link.control_latency.count());
  key("jitter_ns", c.jitter.count());
  key("compute_ns", c.compute_time.count());

  section("workload");
  key("kind", to_string(c.workload));
  key("layout", format_layout(c.layout));
  key("norms", c.norms.segments().empty() ? std::string("constant") : c.norms.to_string());
  key("learning_rate", c.learning_rate);

  section("toy");
  key("classes", c.toy.classes);
  key("features", c.toy.features);
  key("examples_per_worker", c.toy.examples_per_worker);
  key("batch", c.toy.batch);
  key("separation", c.toy.separation);

  section("transport");
  key("max_payload_bytes", c.transport.max_payload_bytes);
  key("probe_timeout_ms", c.transport.probe_timeout.count());
  key("max_probe_retries", c.transport.max_probe_retries);
  key("recv_timeout_ms", c.transport.recv_timeout.count());

  section("socket");
  key("listen", format_endpoint(c.listen));
  key("connect", format_endpoint(c.connect));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<RoundMetrics> simulate_run(const ExperimentConfig& config, const TolerancePolicy& policy,
                                       std::optional<double>* accuracy) {
  ClusterConfig cc;
  cc.transport = config.transport;
  cc.link = config.link;
  cc.loss = config.loss_schedule();
  cc.loss_model = config.loss_model;
  cc.delay.jitter = config.jitter;
  cc.learning_rate = config.learning_rate;
  cc.compute_time = config.compute_time;
  SimulatedCluster cluster(cc, policy, make_sources(config));

  std::vector<RoundMetrics> records;
  records.reserve(config.steps * config.workers * 2);
  for (std::uint64_t s = 0; s < config.steps; ++s) {
    auto report = cluster.step();
    records.insert(records.end(), report.records.begin(), report.records.end());
    if ((s + 1) % 100 == 0) spdlog::debug("step {} done at {} ns", s, cluster.now().count());
  }

  if (accuracy && config.workload == WorkloadKind::Toy) {
    std::vector<BlobDataset> shards;
    for (const auto& w : cluster.workers()) {
      shards.push_back(dynamic_cast<const ToySource&>(w.source()).dataset());
    }
    auto model = ToyModel::init(config.toy.classes, config.toy.features, 0);
    model.set_parameters(cluster.workers().front().parameters());
    *accuracy = toy_eval(model, BlobDataset::concat(shards));
  }
  return records;
}

RunOutcome run_simulation(const ExperimentConfig& config) {
  config.validate();
  RunOutcome out;
  spdlog::info("simulating {} steps with {} workers ({})", config.steps, config.workers,
               config.adaptive ? "adaptive" : "fixed");
  out.records = simulate_run(config, config.policy(), &out.accuracy);
  if (config.baseline) {
    spdlog::info("simulating the fixed-tolerance baseline at p={}", *config.baseline);
    out.baseline_records = simulate_run(config, TolerancePolicy::fixed(*config.baseline), &out.baseline_accuracy);
  }
  const auto up = filter(out.records, Direction::WorkerToServer);
  if (config.baseline) {
    const auto base_up = filter(out.baseline_records, Direction::WorkerToServer);
    out.summary = summarize(up, std::span<const RoundMetrics>(base_up));
  } else {
    out.summary = summarize(up);
  }
  std::set<std::uint64_t> clr;
  for (const auto& r : out.records) {
    if (r.direction == Direction::ServerToWorker && r.clr_active) clr.insert(r.round);
  }
  out.clr_steps = clr.size();
  return out;
}

void write_artifacts(const ExperimentConfig& config, const RunOutcome& outcome) {
  const std::filesystem::path dir(config.output);
  std::filesystem::create_directories(dir);
  write_csv_file((dir / "metrics.csv").string(), outcome.records);
  if (!outcome.baseline_records.empty()) write_csv_file((dir / "baseline.csv").string(), outcome.baseline_records);

  std::string summary;
  summary += fmt::format("preset={}\nseed={}\nsteps={}\nworkers={}\nclr_steps={}\n", config.preset, config.seed,
                         config.steps, config.workers, outcome.clr_steps);
  auto passes = [](const std::vector<RoundMetrics>& rs) {
    std::uint64_t n = 0;
    for (const auto& r : rs) n += r.passes;
    return n;
  };
  summary += fmt::format("total_passes={}\n", passes(outcome.records));
  if (!outcome.baseline_records.empty()) {
    summary += fmt::format("baseline_total_passes={}\n", passes(outcome.baseline_records));
  }
  if (outcome.accuracy) summary += fmt::format("accuracy={}\n", *outcome.accuracy);
  if (outcome.baseline_accuracy) summary += fmt::format("baseline_accuracy={}\n", *outcome.baseline_accuracy);
  summary += format_summary(outcome.summary, "w2s.");
  write_text(dir / "summary.txt", summary);
  write_text(dir / "manifest.ini", to_ini(config));
}

// ---------------------------------------------------------------------------

void run_server_role(const ExperimentConfig& config) {
  config.validate();
  ServerOptions o;
  o.listen = config.listen;
  o.workers = config.workers;
  o.steps = config.steps;
  o.transport = config.transport;
  o.layout = workload_layout(config);
  o.loss = config.loss_schedule();
  o.loss_model = config.loss_model;
  const auto report = run_server(o, config.policy());

  const std::filesystem::path dir(config.output);
  std::filesystem::create_directories(dir);
  auto records = report.records;
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.round, a.worker_id) < std::tie(b.round, b.worker_id);
  });
  write_csv_file((dir / "server.csv").string(), records);
  write_text(dir / "summary.txt", format_summary(summarize(records), "w2s."));
  write_text(dir / "manifest.ini", to_ini(config));
}

void run_worker_role(const ExperimentConfig& config) {
  config.validate();
  WorkerOptions o;
  o.server = config.connect;
  o.transport = config.transport;
  o.layout = workload_layout(config);
  o.loss = config.loss_schedule();
  o.loss_model = config.loss_model;
  o.learning_rate = config.learning_rate;
  const auto sources = std::make_shared<std::vector<std::unique_ptr<GradientSource>>>(make_sources(config));
  const auto report = run_worker(o, [&](std::uint32_t id) -> std::unique_ptr<GradientSource> {
    if (id >= sources->size()) throw ConfigError(fmt::format("worker id {} exceeds run.workers", id));
    return std::move((*sources)[id]);
  });

  const std::filesystem::path dir(config.output);
  std::filesystem::create_directories(dir);
  write_csv_file((dir / fmt::format("worker{}.csv", report.worker_id)).string(), report.records);
  if (config.workload == WorkloadKind::Toy) {
    auto model = ToyModel::init(config.toy.classes, config.toy.features, 0);
    model.set_parameters(report.parameters);
    const ToySource own(toy_params(config), derive(config.seed, Stream::Dataset, report.worker_id));
    spdlog::info("worker {}: train accuracy {:.4f}", report.worker_id, toy_eval(model, own.dataset()));
  }
}

}  // namespace dblp
