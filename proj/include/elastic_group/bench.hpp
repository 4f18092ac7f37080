#pragma once

// Benchmark harness: starts fresh worker processes per trial, times scale-out
// and scale-in from rank 0, and writes the results as CSV.

#include <chrono>
#include <string>
#include <vector>

namespace eg {

enum class Scenario { scale_out, scale_in };

const char* scenario_name(Scenario scenario);
/// ConfigError for anything but "scale_out" / "scale_in".
Scenario parse_scenario(const std::string& name);

struct BenchRecord {
  Scenario scenario = Scenario::scale_out;
  int initial = 0;
  int delta = 0;
  int trial = 0;
  double total_seconds = 0;  // -1 marks a failed trial
  double spawn_seconds = 0;
  double other_seconds = 0;
  int hosts_used = 0;

  bool failed() const { return total_seconds < 0; }
  bool operator==(const BenchRecord&) const = default;
};

struct BenchConfig {
  int initial = 16;
  std::vector<int> deltas;
  int trials = 5;
  int slots_per_host = 32;
  std::string child_program;
  std::string output_path;
  std::chrono::milliseconds step_timeout{120000};

  /// ConfigError describing the first violated constraint.
  void validate(Scenario scenario) const;
};

/// Label of the emulated host holding slot `index` when hosts are filled in order.
std::string packed_host_label(int index, int slots_per_host);
int hosts_needed(int members, int slots_per_host);

std::vector<BenchRecord> run_scale_out_bench(const BenchConfig& config);
std::vector<BenchRecord> run_scale_in_bench(const BenchConfig& config);

inline constexpr const char* kCsvHeader = "scenario,initial,delta,trial,total_s,spawn_s,other_s,hosts_used";

std::string format_csv(const std::vector<BenchRecord>& records);
/// IoError if the file cannot be written.
void emit_csv(const std::vector<BenchRecord>& records, const std::string& path);
/// ConfigError on a bad header or row.
std::vector<BenchRecord> parse_csv(const std::string& text);
std::vector<BenchRecord> read_csv(const std::string& path);

struct DeltaSummary {
  Scenario scenario = Scenario::scale_out;
  int delta = 0;
  int completed = 0;
  int failed = 0;
  double mean_total = 0;
  double mean_spawn = 0;
  double mean_other = 0;
  int hosts_used = 0;
};

/// Means over completed trials, one entry per (scenario, delta) in first-seen order.
std::vector<DeltaSummary> summarize(const std::vector<BenchRecord>& records);

}  // namespace eg
