#include "dblp/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {

const char* const kMetricsCsvHeader =
    "round,worker_id,direction,latency_s,passes,tolerance,clr_active,burst,chunks_total,chunks_received";

namespace {

template <typename T>
T parse_int(std::string_view field, std::size_t line) {
  T v{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ConfigError(fmt::format("metrics line {}: bad integer '{}'", line, field));
  }
  return v;
}

double parse_real(std::string_view field, std::size_t line) {
  try {
    std::size_t used = 0;
    const std::string s(field);
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("metrics line {}: bad number '{}'", line, field));
}

bool parse_flag(std::string_view field, std::size_t line) {
  if (field == "0") return false;
  if (field == "1") return true;
  throw ConfigError(fmt::format("metrics line {}: bad flag '{}'", line, field));
}

// "12.345678901" -> nanoseconds, without a detour through double.
std::chrono::nanoseconds parse_seconds(std::string_view field, std::size_t line) {
  const auto dot = field.find('.');
  const auto whole = parse_int<std::int64_t>(field.substr(0, dot), line);
  std::int64_t frac = 0;
  if (dot != std::string_view::npos) {
    auto digits = field.substr(dot + 1);
    if (digits.empty() || digits.size() > 9) {
      throw ConfigError(fmt::format("metrics line {}: bad latency '{}'", line, field));
    }
    frac = parse_int<std::int64_t>(digits, line);
    for (auto n = digits.size(); n < 9; ++n) frac *= 10;
  }
  return std::chrono::nanoseconds(whole * 1'000'000'000 + frac);
}

std::string format_seconds(std::chrono::nanoseconds ns) {
  const auto count = ns.count();
  return fmt::format("{}.{:09d}", count / 1'000'000'000, count % 1'000'000'000);
}

double seconds(std::chrono::nanoseconds ns) { return std::chrono::duration<double>(ns).count(); }

struct Stats {
  double average = 0.0;
  double tail = 0.0;
  double p99 = 0.0;
  std::uint64_t passes = 0;
};

Stats stats(std::span<const RoundMetrics> records) {
  std::vector<std::int64_t> ns;
  ns.reserve(records.size());
  std::int64_t sum = 0;  // exact, so the mean does not depend on order
  Stats s;
  for (const auto& r : records) {
    ns.push_back(r.latency.count());
    sum += r.latency.count();
    s.passes += r.passes;
  }
  std::sort(ns.begin(), ns.end());
  const auto n = ns.size();
  s.average = static_cast<double>(sum) / static_cast<double>(n) * 1e-9;
  s.tail = static_cast<double>(ns.back()) * 1e-9;
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
  s.p99 = static_cast<double>(ns[std::max<std::size_t>(rank, 1) - 1]) * 1e-9;
  return s;
}

std::map<std::uint64_t, std::chrono::nanoseconds> slowest_by_round(std::span<const RoundMetrics> records,
                                                                   bool bursts_only) {
  std::map<std::uint64_t, std::chrono::nanoseconds> out;
  for (const auto& r : records) {
    if (bursts_only && !r.burst_round) continue;
    auto& slot = out[r.round];
    slot = std::max(slot, r.latency);
  }
  return out;
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::WorkerToServer ? "w2s" : "s2w"; }

Direction parse_direction(std::string_view text) {
  if (text == "w2s") return Direction::WorkerToServer;
  if (text == "s2w") return Direction::ServerToWorker;
  throw ConfigError(fmt::format("unknown direction '{}'", text));
}

void write_csv(std::ostream& out, std::span<const RoundMetrics> records) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : records) {
    out << fmt::format("{},{},{},{},{},{},{:d},{:d},{},{}\n", r.round, r.worker_id, to_string(r.direction),
                       format_seconds(r.latency), r.passes, r.tolerance, r.clr_active ? 1 : 0,
                       r.burst_round ? 1 : 0, r.chunks_total, r.chunks_received);
  }
}

std::vector<RoundMetrics> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) throw ConfigError("metrics CSV has no valid header");
  std::vector<RoundMetrics> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 10) throw ConfigError(fmt::format("metrics line {}: expected 10 fields", lineno));
    RoundMetrics r;
    r.round = parse_int<std::uint64_t>(f[0], lineno);
    r.worker_id = parse_int<std::uint32_t>(f[1], lineno);
    r.direction = parse_direction(f[2]);
    r.latency = parse_seconds(f[3], lineno);
    r.passes = parse_int<std::size_t>(f[4], lineno);
    r.tolerance = parse_real(f[5], lineno);
    r.clr_active = parse_flag(f[6], lineno);
    r.burst_round = parse_flag(f[7], lineno);
    r.chunks_total = parse_int<std::uint32_t>(f[8], lineno);
    r.chunks_received = parse_int<std::uint32_t>(f[9], lineno);
    out.push_back(r);
  }
  return out;
}

void write_csv_file(const std::string& path, std::span<const RoundMetrics> records) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path));
  write_csv(out, records);
  if (!out) throw Error(fmt::format("write to {} failed", path));
}

std::vector<RoundMetrics> read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path));
  return read_csv(in);
}

std::vector<RoundMetrics> filter(std::span<const RoundMetrics> records, Direction direction) {
  std::vector<RoundMetrics> out;
  for (const auto& r : records) {
    if (r.direction == direction) out.push_back(r);
  }
  return out;
}

LatencySummary summarize(std::span<const RoundMetrics> records,
                         std::optional<std::span<const RoundMetrics>> comparison) {
  if (records.empty()) throw EmptyRecords("no latency records to summarize");
  LatencySummary s;
  const auto mine = stats(records);
  s.count = records.size();
  s.average_s = mine.average;
  s.tail_s = mine.tail;
  s.p99_s = mine.p99;
  s.total_passes = mine.passes;

  std::map<std::uint64_t, std::chrono::nanoseconds> other;
  if (comparison && !comparison->empty()) {
    const auto theirs = stats(*comparison);
    s.comparison_average_s = theirs.average;
    s.comparison_tail_s = theirs.tail;
    s.average_speedup = theirs.average / mine.average;
    s.tail_speedup = theirs.tail / mine.tail;
    other = slowest_by_round(*comparison, true);
  }
  for (const auto& [round, latency] : slowest_by_round(records, true)) {
    BurstLatency b;
    b.round = round;
    b.latency_s = seconds(latency);
    if (auto it = other.find(round); it != other.end()) {
      b.comparison_s = seconds(it->second);
      b.speedup = *b.comparison_s / b.latency_s;
    }
    s.bursts.push_back(b);
  }
  return s;
}

std::vector<std::pair<double, double>> cdf(std::span<const RoundMetrics> records) {
  if (records.empty()) throw EmptyRecords("no latency records for a CDF");
  std::vector<std::int64_t> ns;
  ns.reserve(records.size());
  for (const auto& r : records) ns.push_back(r.latency.count());
  std::sort(ns.begin(), ns.end());
  std::vector<std::pair<double, double>> out;
  const auto n = static_cast<double>(ns.size());
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (i + 1 < ns.size() && ns[i + 1] == ns[i]) continue;
    out.emplace_back(static_cast<double>(ns[i]) * 1e-9, static_cast<double>(i + 1) / n);
  }
  return out;
}

std::string format_summary(const LatencySummary& s, std::string_view prefix) {
  std::ostringstream out;
  auto line = [&](std::string_view key, const auto& value) { out << prefix << key << '=' << fmt::format("{}", value) << '\n'; };
  line("count", s.count);
  line("average_s", s.average_s);
  line("tail_s", s.tail_s);
  line("p99_s", s.p99_s);
  line("total_passes", s.total_passes);
  if (s.comparison_average_s) line("comparison_average_s", *s.comparison_average_s);
  if (s.comparison_tail_s) line("comparison_tail_s", *s.comparison_tail_s);
  if (s.average_speedup) line("average_speedup", *s.average_speedup);
  if (s.tail_speedup) line("tail_speedup", *s.tail_speedup);
  for (const auto& b : s.bursts) {
    const auto key = fmt::format("burst.{}", b.round);
    line(key + ".latency_s", b.latency_s);
    if (b.comparison_s) line(key + ".comparison_s", *b.comparison_s);
    if (b.speedup) line(key + ".speedup", *b.speedup);
  }
  return out.str();
}

void MetricsCollector::add(RoundMetrics record) {
  std::lock_guard lock(mu_);
  records_.push_back(record);
}

std::vector<RoundMetrics> MetricsCollector::snapshot() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t MetricsCollector::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

}  // namespace dblp
