#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dblp {

enum class Direction {
  WorkerToServer,
  ServerToWorker,
};

std::string_view to_string(Direction d);  // "w2s" / "s2w"
Direction parse_direction(std::string_view text);

struct RoundMetrics {
  std::uint64_t round = 0;  // training step
  std::uint32_t worker_id = 0;
  Direction direction = Direction::WorkerToServer;
  std::chrono::nanoseconds latency{0};
  std::size_t passes = 0;
  double tolerance = 0.0;
  bool clr_active = false;
  bool burst_round = false;
  std::uint32_t chunks_total = 0;
  std::uint32_t chunks_received = 0;

  double latency_seconds() const { return std::chrono::duration<double>(latency).count(); }
  bool operator==(const RoundMetrics&) const = default;
};

/// Header line of the metrics CSV.
extern const char* const kMetricsCsvHeader;

/// Latencies are written in seconds with nanosecond precision, tolerances
/// with the shortest round-tripping representation, so read_csv(write_csv(x))
/// == x.
void write_csv(std::ostream& out, std::span<const RoundMetrics> records);
/// Throws ConfigError on a malformed file.
std::vector<RoundMetrics> read_csv(std::istream& in);

void write_csv_file(const std::string& path, std::span<const RoundMetrics> records);
std::vector<RoundMetrics> read_csv_file(const std::string& path);

std::vector<RoundMetrics> filter(std::span<const RoundMetrics> records, Direction direction);

struct BurstLatency {
  std::uint64_t round = 0;
  double latency_s = 0.0;  // slowest worker in the round
  std::optional<double> comparison_s;
  std::optional<double> speedup;  // comparison / latency
};

struct LatencySummary {
  std::size_t count = 0;
  double average_s = 0.0;
  double tail_s = 0.0;  // maximum
  double p99_s = 0.0;   // nearest rank
  std::uint64_t total_passes = 0;
  std::vector<BurstLatency> bursts;

  std::optional<double> comparison_average_s;
  std::optional<double> comparison_tail_s;
  std::optional<double> average_speedup;  // comparison / this
  std::optional<double> tail_speedup;
};

/// Throws EmptyRecords for an empty input. Burst rows are rounds whose
/// records carry burst_round; the comparison run is matched by round.
LatencySummary summarize(std::span<const RoundMetrics> records,
                         std::optional<std::span<const RoundMetrics>> comparison = std::nullopt);

/// Empirical CDF as (latency_s, fraction <= latency) points, one per
/// distinct latency, in increasing order.
std::vector<std::pair<double, double>> cdf(std::span<const RoundMetrics> records);

/// `key=value` lines, one per summary field.
std::string format_summary(const LatencySummary& s, std::string_view prefix = "");

/// Thread-safe append-only record sink.
class MetricsCollector {
 public:
  void add(RoundMetrics record);
  std::vector<RoundMetrics> snapshot() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<RoundMetrics> records_;
};

}  // namespace dblp
