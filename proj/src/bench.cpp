#include "elastic_group/bench.hpp"

#include <signal.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "elastic_group/bootstrap.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/spawner.hpp"
#include "elastic_group/worker.hpp"

namespace eg {

using Clock = std::chrono::steady_clock;

const char* scenario_name(Scenario scenario) {
  return scenario == Scenario::scale_out ? "scale_out" : "scale_in";
}

Scenario parse_scenario(const std::string& name) {
  if (name == "scale_out") return Scenario::scale_out;
  if (name == "scale_in") return Scenario::scale_in;
  throw ConfigError("unknown scenario '" + name + "'");
}

void BenchConfig::validate(Scenario scenario) const {
  if (initial < 1) throw ConfigError("initial must be at least 1");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (slots_per_host < 1) throw ConfigError("slots per host must be at least 1");
  if (deltas.empty()) throw ConfigError("no deltas given");
  if (child_program.empty()) throw ConfigError("child program path is empty");
  for (int d : deltas) {
    if (scenario == Scenario::scale_out && d < 1) {
      throw ConfigError("scale-out delta must be at least 1, got " + std::to_string(d));
    }
    if (scenario == Scenario::scale_in && (d < 0 || d > initial - 1)) {
      throw ConfigError("scale-in delta " + std::to_string(d) + " must lie in [0, " + std::to_string(initial - 1) +
                        "] so that one member remains");
    }
  }
}

std::string packed_host_label(int index, int slots_per_host) { return "host" + std::to_string(index / slots_per_host); }

int hosts_needed(int members, int slots_per_host) { return (members + slots_per_host - 1) / slots_per_host; }

namespace {

// One set of freshly started workers, driven over the command protocol.
class Trial {
 public:
  Trial(const BenchConfig& config, int initial)
      : config_(config), initial_(initial), rendezvous_(Rendezvous::listen()) {}
  Trial(const Trial&) = delete;
  Trial& operator=(const Trial&) = delete;
  ~Trial() { cleanup(); }

  void start() {
    auto& launcher = LocalLauncher::instance();
    std::vector<std::string> base;
    for (auto& e : child_environment({})) {
      if (!e.starts_with(std::string(kEnvDriverAddr) + "=") && !e.starts_with(std::string(kEnvDriverId) + "=")) {
        base.push_back(e);
      }
    }
    for (int i = 0; i < initial_; ++i) {
      std::vector<std::string> env = base;
      env.push_back(std::string(kEnvRendezvousAddr) + "=" + rendezvous_.address());
      env.push_back(std::string(kEnvBootIndex) + "=" + std::to_string(i));
      env.push_back(std::string(kEnvBootCount) + "=" + std::to_string(initial_));
      env.push_back(std::string(kEnvHostLabel) + "=" + packed_host_label(i, config_.slots_per_host));
      env.push_back(std::string(kEnvDriverAddr) + "=" + rendezvous_.address());
      env.push_back(std::string(kEnvDriverId) + "=" + rendezvous_.endpoint().incarnation_id());
      pid_t pid = launcher.launch_in_group(config_.child_program, {}, env, pgid_ == 0 ? 0 : pgid_);
      if (pgid_ == 0) pgid_ = pid;
      pids_.push_back(pid);
    }
    auto roster = rendezvous_.form_group(initial_, config_.step_timeout, [this] { check_alive(true); });
    leader_ = roster[0].incarnation_id;
  }

  StepReport command(const Command& command, std::chrono::milliseconds timeout) {
    auto& endpoint = rendezvous_.endpoint();
    auto ch = endpoint.channel(leader_);
    if (!ch) throw DeliveryError(leader_, "no channel to the group leader");
    endpoint.send(ch, transport::Envelope{0, kCommandTag, -1, 0, command.encode()});

    transport::Match match;
    match.tag = kReplyTag;
    auto deadline = Clock::now() + timeout;
    for (;;) {
      if (auto got = endpoint.try_recv(match, std::chrono::milliseconds(200))) {
        StepReport report = StepReport::decode(got->envelope.payload);
        leader_ = report.leader_id;
        return report;
      }
      check_alive(false);
      if (Clock::now() >= deadline) throw TimeoutError("worker group did not reply in time");
    }
  }

  void stop() {
    command(Command{}, std::chrono::seconds(20));
    for (pid_t pid : pids_) LocalLauncher::instance().wait_exit(pid, std::chrono::seconds(10));
  }

 private:
  // Before the group exists every exit is fatal; afterwards removed workers
  // legitimately exit 0, so only failures and the leader's exit count.
  void check_alive(bool any_exit_fatal) {
    for (std::size_t i = 0; i < pids_.size(); ++i) {
      auto st = LocalLauncher::instance().exit_status(pids_[i]);
      if (st && (any_exit_fatal || *st != 0 || i == 0)) {
        throw SpawnError("worker " + std::to_string(i) + " exited early with status " + std::to_string(*st));
      }
    }
  }

  void cleanup() {
    if (pgid_ > 0) ::killpg(pgid_, SIGKILL);
    for (pid_t pid : pids_) LocalLauncher::instance().wait_exit(pid, std::chrono::seconds(5));
    rendezvous_.endpoint().close();
  }

  const BenchConfig& config_;
  int initial_;
  Rendezvous rendezvous_;
  pid_t pgid_ = 0;
  std::vector<pid_t> pids_;
  std::string leader_;
};

BenchRecord failure_row(Scenario scenario, int initial, int delta, int trial, int hosts) {
  return BenchRecord{scenario, initial, delta, trial, -1.0, 0.0, 0.0, hosts};
}

}  // namespace

std::vector<BenchRecord> run_scale_out_bench(const BenchConfig& config) {
  config.validate(Scenario::scale_out);
  std::vector<BenchRecord> records;
  for (int delta : config.deltas) {
    int hosts = hosts_needed(config.initial + delta, config.slots_per_host);
    for (int trial = 0; trial < config.trials; ++trial) {
      try {
        Trial t(config, config.initial);
        t.start();
        Command c;
        c.op = Command::Op::scale_out;
        c.count = delta;
        c.program = config.child_program;
        std::vector<std::string> labels;
        for (int j = 0; j < delta; ++j) labels.push_back(packed_host_label(config.initial + j, config.slots_per_host));
        c.host_labels = labels;
        StepReport r = t.command(c, config.step_timeout);
        if (!r.ok) throw Error(r.error);
        if (r.size != config.initial + delta) throw ProtocolError("merged group has the wrong size");
        records.push_back(BenchRecord{Scenario::scale_out, config.initial, delta, trial, r.scale_out.total_seconds,
                                      r.scale_out.spawn_seconds, r.scale_out.other_seconds, hosts});
        t.stop();
      } catch (const Error& e) {
        std::cerr << "scale_out delta=" << delta << " trial=" << trial << " failed: " << e.what() << "\n";
        if (records.empty() || records.back().delta != delta || records.back().trial != trial) {
          records.push_back(failure_row(Scenario::scale_out, config.initial, delta, trial, hosts));
        }
      }
    }
  }
  return records;
}

std::vector<BenchRecord> run_scale_in_bench(const BenchConfig& config) {
  config.validate(Scenario::scale_in);
  std::vector<BenchRecord> records;
  for (int delta : config.deltas) {
    int hosts = hosts_needed(config.initial - delta, config.slots_per_host);
    for (int trial = 0; trial < config.trials; ++trial) {
      try {
        Trial t(config, config.initial);
        t.start();
        Command c;
        c.op = Command::Op::scale_in;
        for (int r = config.initial - delta; r < config.initial; ++r) c.removing.push_back(r);
        StepReport r = t.command(c, config.step_timeout);
        if (!r.ok) throw Error(r.error);
        if (r.size != config.initial - delta) throw ProtocolError("remaining group has the wrong size");
        records.push_back(BenchRecord{Scenario::scale_in, config.initial, delta, trial, r.scale_in_seconds, 0.0,
                                      r.scale_in_seconds, hosts});
        t.stop();
      } catch (const Error& e) {
        std::cerr << "scale_in delta=" << delta << " trial=" << trial << " failed: " << e.what() << "\n";
        if (records.empty() || records.back().delta != delta || records.back().trial != trial) {
          records.push_back(failure_row(Scenario::scale_in, config.initial, delta, trial, hosts));
        }
      }
    }
  }
  return records;
}

std::string format_csv(const std::vector<BenchRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%s,%d,%d,%d,%.6f,%.6f,%.6f,%d\n", scenario_name(r.scenario), r.initial,
                  r.delta, r.trial, r.total_seconds, r.spawn_seconds, r.other_seconds, r.hosts_used);
    out += line;
  }
  return out;
}

void emit_csv(const std::vector<BenchRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << format_csv(records);
  f.flush();
  if (!f) throw IoError("failed writing " + path);
}

namespace {

template <typename T>
T parse_field(const std::string& text, int line_no, const char* column) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("line " + std::to_string(line_no) + ": bad " + column + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<BenchRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ConfigError("missing or unexpected CSV header");
  std::vector<BenchRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ConfigError("line " + std::to_string(line_no) + ": expected 8 fields");
    BenchRecord r;
    r.scenario = parse_scenario(f[0]);
    r.initial = parse_field<int>(f[1], line_no, "initial");
    r.delta = parse_field<int>(f[2], line_no, "delta");
    r.trial = parse_field<int>(f[3], line_no, "trial");
    r.total_seconds = parse_field<double>(f[4], line_no, "total_s");
    r.spawn_seconds = parse_field<double>(f[5], line_no, "spawn_s");
    r.other_seconds = parse_field<double>(f[6], line_no, "other_s");
    r.hosts_used = parse_field<int>(f[7], line_no, "hosts_used");
    records.push_back(r);
  }
  return records;
}

std::vector<BenchRecord> read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

std::vector<DeltaSummary> summarize(const std::vector<BenchRecord>& records) {
  std::vector<DeltaSummary> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const DeltaSummary& s) { return s.scenario == r.scenario && s.delta == r.delta; });
    if (it == out.end()) {
      out.push_back(DeltaSummary{r.scenario, r.delta, 0, 0, 0, 0, 0, r.hosts_used});
      it = out.end() - 1;
    }
    if (r.failed()) {
      ++it->failed;
      continue;
    }
    ++it->completed;
    it->mean_total += r.total_seconds;
    it->mean_spawn += r.spawn_seconds;
    it->mean_other += r.other_seconds;
  }
  for (auto& s : out) {
    if (s.completed == 0) continue;
    s.mean_total /= s.completed;
    s.mean_spawn /= s.completed;
    s.mean_other /= s.completed;
  }
  return out;
}

}  // namespace eg
