// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "elastic_group/bench.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/scaling.hpp"
#include "elastic_group/worker.hpp"
#include "local_cluster.hpp"

using namespace eg;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds.
constexpr double kMergeMapBudgetSeconds = 60.0;
constexpr int kSplitMaxMembers = 5;
constexpr int kHostMaxMembers = 6;
constexpr int kHostMaxHosts = 3;
constexpr int kFencingProbes = 1000;
constexpr int kFencingMaxMembers = 8;
constexpr double kConnectivityBudgetSeconds = 1.0;
constexpr double kMonotonicAllowance = 0.20;
constexpr double kSpawnShareFloor = 0.50;
constexpr int kTrendInitial = 4;
constexpr int kTrendTrials = 5;
constexpr int kCompareInitial = 20;
constexpr int kCsvRecords = 1000;
const std::vector<int> kTrendDeltas = {2, 4, 8, 16};

struct Verdict {
  bool pass = true;
  std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& check) {
  Verdict v;
  auto t0 = Clock::now();
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!v.pass) ++g_failures;
  std::printf("[%s] %d %s (%.2fs) %s\n", v.pass ? "PASS" : "FAIL", id, name, secs, v.detail.c_str());
  std::fflush(stdout);
}

std::vector<StepOutcome> step_all(const std::vector<Group>& local, const Command& command) {
  return egtest::on_each(static_cast<int>(local.size()), [&](int i) {
    const auto& g = local[static_cast<std::size_t>(i)];
    return g.rank() == 0 ? lead_step(g, command) : follow_step(g);
  });
}

std::vector<MemberReport> probe_all(const std::vector<Group>& local) {
  Command probe;
  probe.op = Command::Op::probe;
  auto outs = step_all(local, probe);
  if (!outs[0].report.ok) throw ProtocolError("probe failed: " + outs[0].report.error);
  return outs[0].report.members;
}

std::vector<Group> scale_out_all(const std::vector<Group>& groups, int k) {
  return egtest::on_each(static_cast<int>(groups.size()), [&](int i) {
    return scale_out(groups[static_cast<std::size_t>(i)], k, EG_WORKER_PATH);
  });
}

Verdict merge_rank_map() {
  auto t0 = Clock::now();
  int cases = 0;
  for (int n : {1, 2, 4, 8}) {
    for (int k : {1, 2, 4}) {
      auto groups = egtest::form_local_group(n);
      std::vector<std::string> before;
      for (const auto& m : groups[0].roster()) before.push_back(m.incarnation_id);
      auto merged = scale_out_all(groups, k);
      auto members = probe_all(merged);
      std::string where = " at n=" + std::to_string(n) + " k=" + std::to_string(k);
      if (static_cast<int>(members.size()) != n + k) return {false, "wrong merged size" + where};
      for (int i = 0; i < n; ++i) {
        if (merged[static_cast<std::size_t>(i)].rank() != i ||
            members[static_cast<std::size_t>(i)].incarnation_id != before[static_cast<std::size_t>(i)]) {
          return {false, "original " + std::to_string(i) + " moved" + where};
        }
      }
      for (int j = 0; j < k; ++j) {
        const auto& m = members[static_cast<std::size_t>(n + j)];
        if (m.rank != n + j || m.child_index != j) return {false, "child " + std::to_string(j) + " misplaced" + where};
      }
      egtest::stop_workers(merged);
      ++cases;
    }
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%d cases exact, %.2fs < %.0fs", cases, secs, kMergeMapBudgetSeconds);
  return {secs < kMergeMapBudgetSeconds, buf};
}

Verdict split_oracle() {
  int cases = 0;
  for (int n = 1; n <= kSplitMaxMembers; ++n) {
    for (int mask = 0; mask < (1 << n); ++mask) {
      auto groups = egtest::form_local_group(n);
      std::vector<bool> removing;
      for (int i = 0; i < n; ++i) removing.push_back((mask >> i) & 1);
      // Oracle: survivors in old-rank order.
      std::vector<std::string> expected;
      for (int i = 0; i < n; ++i) {
        if (!removing[static_cast<std::size_t>(i)]) expected.push_back(groups[0].member(i).incarnation_id);
      }
      auto outs = egtest::on_each(n, [&](int i) {
        return scale_in(groups[static_cast<std::size_t>(i)], removing[static_cast<std::size_t>(i)]);
      });
      for (int i = 0; i < n; ++i) {
        const auto& o = outs[static_cast<std::size_t>(i)];
        if (removing[static_cast<std::size_t>(i)] != o.retired()) return {false, "wrong retirement"};
        if (o.retired()) continue;
        std::vector<std::string> got;
        for (const auto& m : o.group().roster()) got.push_back(m.incarnation_id);
        auto pos = std::find(expected.begin(), expected.end(), groups[static_cast<std::size_t>(i)].node().self().incarnation_id);
        if (got != expected || o.group().rank() != pos - expected.begin()) {
          return {false, "membership differs at n=" + std::to_string(n) + " mask=" + std::to_string(mask)};
        }
      }
      ++cases;
    }
  }
  return {true, std::to_string(cases) + " assignments match"};
}

Verdict host_oracle() {
  const std::vector<std::string> names = {"A", "B", "C"};
  long checked = 0;
  for (int n = 1; n <= kHostMaxMembers; ++n) {
    for (int hosts = 1; hosts <= kHostMaxHosts; ++hosts) {
      int assignments = 1;
      for (int i = 0; i < n; ++i) assignments *= hosts;
      for (int a = 0; a < assignments; ++a) {
        std::vector<std::string> label;
        for (int i = 0, x = a; i < n; ++i, x /= hosts) label.push_back(names[static_cast<std::size_t>(x % hosts)]);
        for (int mask = 0; mask < (1 << n); ++mask) {
          HostOccupancy occ;
          for (int i = 0; i < n; ++i) {
            Bytes b = (mask >> i) & 1 ? sentinel_block() : host_block(label[static_cast<std::size_t>(i)]);
            occ.blocks.insert(occ.blocks.end(), b.begin(), b.end());
          }
          for (int i = 0; i < n; ++i) {
            bool shared = false;
            for (int r = 0; r < n; ++r) shared |= !((mask >> r) & 1) && label[static_cast<std::size_t>(r)] == label[static_cast<std::size_t>(i)];
            if (host_can_terminate(occ, label[static_cast<std::size_t>(i)]) != !shared) {
              return {false, "mismatch at n=" + std::to_string(n) + " assignment=" + std::to_string(a) +
                                 " mask=" + std::to_string(mask)};
            }
            ++checked;
          }
        }
      }
    }
  }
  // Live runs: every remaining member vetoes, removing members match the oracle.
  long live = 0;
  for (const auto& label : std::vector<std::vector<std::string>>{{"A", "A", "B", "B"}, {"A", "B", "C", "A"}, {"C", "C", "C", "C"}}) {
    for (int mask = 0; mask < 16; ++mask) {
      auto groups = egtest::form_local_group(4, label);
      auto outs = egtest::on_each(4, [&](int i) { return scale_in(groups[static_cast<std::size_t>(i)], (mask >> i) & 1); });
      for (int i = 0; i < 4; ++i) {
        bool shared = false;
        for (int r = 0; r < 4; ++r) shared |= !((mask >> r) & 1) && label[static_cast<std::size_t>(r)] == label[static_cast<std::size_t>(i)];
        if (outs[static_cast<std::size_t>(i)].can_terminate_host != !shared) return {false, "live scale_in disagrees"};
        if (!((mask >> i) & 1) && outs[static_cast<std::size_t>(i)].can_terminate_host) return {false, "remaining member did not veto"};
        ++live;
      }
    }
  }
  return {true, std::to_string(checked) + " decisions + " + std::to_string(live) + " live decisions match"};
}

Verdict fencing() {
  std::mt19937 rng(2024);
  int rejected = 0, delivered = 0, probes = 0;
  while (probes < kFencingProbes) {
    int n = 2 + static_cast<int>(rng() % (kFencingMaxMembers - 1));
    auto groups = egtest::form_local_group(n);
    std::vector<bool> removing(static_cast<std::size_t>(n));
    int m = 0;
    for (int i = 1; i < n; ++i) m += (removing[static_cast<std::size_t>(i)] = rng() % 2);
    if (m == 0) removing[static_cast<std::size_t>(n - 1)] = true;
    auto outs = egtest::on_each(n, [&](int i) { return scale_in(groups[static_cast<std::size_t>(i)], removing[static_cast<std::size_t>(i)]); });
    std::vector<int> keep, gone;
    for (int i = 0; i < n; ++i) (removing[static_cast<std::size_t>(i)] ? gone : keep).push_back(i);
    Epoch new_epoch = outs[static_cast<std::size_t>(keep[0])].group().epoch();

    for (int p = 0; p < 100 && probes < kFencingProbes; ++p, ++probes) {
      int a = keep[rng() % keep.size()];
      int b = gone[rng() % gone.size()];
      auto& ka = groups[static_cast<std::size_t>(a)].node().endpoint();
      auto& gb = groups[static_cast<std::size_t>(b)].node().endpoint();
      Tag tag = 64 + static_cast<Tag>(rng() % 64);
      Epoch epoch = rng() % 2 ? new_epoch : new_epoch - 1;
      int kind = static_cast<int>(rng() % 4);
      bool refused = false;
      try {
        switch (kind) {
          case 0:  // remaining -> removed, raw channel
            ka.send(ka.channel(gb.incarnation_id()), transport::Envelope{epoch, tag, 0, 0, to_bytes("probe")});
            break;
          case 1:  // remaining -> removed, through the superseded group
            groups[static_cast<std::size_t>(a)].send(b, tag, to_bytes("probe"));
            break;
          case 2:  // removed -> remaining, through its retired group
            groups[static_cast<std::size_t>(b)].send(a, tag, to_bytes("probe"));
            break;
          default: {  // removed -> remaining, raw channel; the receiver must refuse it
            auto ch = gb.channel(ka.incarnation_id());
            if (!ch) ch = gb.connect(ka.address(), ka.incarnation_id());
            gb.send(ch, transport::Envelope{epoch, tag, 0, 0, to_bytes("probe")});
            refused = gb.next_rejection(std::chrono::seconds(5)).has_value();
          }
        }
      } catch (const FencingError&) {
        refused = true;
      } catch (const RetiredGroupError&) {
        refused = true;
      }
      rejected += refused;
    }
    transport::Match user;
    for (int i : keep) {
      auto& ep = groups[static_cast<std::size_t>(i)].node().endpoint();
      for (Tag t = 64; t < 128; ++t) {
        user.tag = t;
        while (ep.try_recv(user, std::chrono::milliseconds(0))) ++delivered;
      }
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d/%d probes rejected, %d stale payloads delivered", rejected, probes, delivered);
  return {rejected == probes && delivered == 0, buf};
}

Verdict connectivity() {
  std::string detail;
  for (auto [n, k] : std::vector<std::pair<int, int>>{{1, 1}, {4, 4}, {8, 16}}) {
    auto groups = egtest::form_local_group(n);
    std::vector<Clock::time_point> returned(static_cast<std::size_t>(n));
    auto merged = egtest::on_each(n, [&](int i) {
      Group g = scale_out(groups[static_cast<std::size_t>(i)], k, EG_WORKER_PATH);
      returned[static_cast<std::size_t>(i)] = Clock::now();
      return g;
    });
    auto members = probe_all(merged);
    double secs = std::chrono::duration<double>(Clock::now() - returned[0]).count();
    std::set<std::string> ids;
    for (const auto& m : members) ids.insert(m.incarnation_id);
    egtest::stop_workers(merged);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "n=%d k=%d: %zu ids in %.3fs; ", n, k, ids.size(), secs);
    detail += buf;
    if (static_cast<int>(ids.size()) != n + k || secs >= kConnectivityBudgetSeconds) return {false, detail};
  }
  return {true, detail};
}

BenchConfig trend_config(int initial) {
  BenchConfig c;
  c.initial = initial;
  c.deltas = kTrendDeltas;
  c.trials = kTrendTrials;
  c.slots_per_host = 32;
  c.child_program = EG_WORKER_PATH;
  return c;
}

std::string means_text(const std::vector<DeltaSummary>& s, bool with_spawn) {
  std::string out;
  char buf[96];
  for (const auto& d : s) {
    if (with_spawn) {
      std::snprintf(buf, sizeof(buf), "d=%d %.4f/%.4f ", d.delta, d.mean_spawn, d.mean_total);
    } else {
      std::snprintf(buf, sizeof(buf), "d=%d %.4f ", d.delta, d.mean_total);
    }
    out += buf;
  }
  return out;
}

bool any_failed(const std::vector<DeltaSummary>& s) {
  return std::any_of(s.begin(), s.end(), [](const DeltaSummary& d) { return d.failed > 0 || d.completed == 0; });
}

Verdict csv_round_trip() {
  std::mt19937_64 rng(77);
  std::vector<BenchRecord> records;
  for (int i = 0; i < kCsvRecords; ++i) {
    BenchRecord r;
    r.scenario = rng() % 2 ? Scenario::scale_out : Scenario::scale_in;
    r.initial = static_cast<int>(rng() % 200);
    r.delta = static_cast<int>(rng() % 200);
    r.trial = static_cast<int>(rng() % 10);
    // Values with exactly six decimals, built by division so they are the nearest doubles.
    r.total_seconds = static_cast<double>(rng() % 100000000) / 1e6;
    r.spawn_seconds = static_cast<double>(rng() % 100000000) / 1e6;
    r.other_seconds = static_cast<double>(rng() % 100000000) / 1e6;
    r.hosts_used = static_cast<int>(rng() % 8);
    records.push_back(r);
  }
  std::string path = "/tmp/eg_acceptance_roundtrip.csv";
  emit_csv(records, path);
  auto back = read_csv(path);
  bool text_stable = format_csv(back) == format_csv(records);
  return {back == records && text_stable, std::to_string(back.size()) + " records identical after emit/parse"};
}

}  // namespace

int main() {
  LocalLauncher::instance().adopt_orphans();

  report(1, "merge rank map", merge_rank_map);
  report(2, "split oracle equivalence", split_oracle);
  report(3, "host-termination oracle", host_oracle);
  report(4, "fencing", fencing);
  report(5, "immediate connectivity", connectivity);

  std::vector<DeltaSummary> out_trend;
  report(6, "scale-out monotonicity", [&]() -> Verdict {
    out_trend = summarize(run_scale_out_bench(trend_config(kTrendInitial)));
    if (any_failed(out_trend)) return {false, "failed trials: " + means_text(out_trend, false)};
    for (std::size_t i = 1; i < out_trend.size(); ++i) {
      if (out_trend[i].mean_total < (1.0 - kMonotonicAllowance) * out_trend[i - 1].mean_total) {
        return {false, means_text(out_trend, false)};
      }
    }
    return {true, means_text(out_trend, false)};
  });
  report(7, "spawn dominates scale-out", [&]() -> Verdict {
    if (out_trend.empty() || any_failed(out_trend)) return {false, "no scale-out run"};
    for (const auto& d : out_trend) {
      if (d.mean_spawn < kSpawnShareFloor * d.mean_total) return {false, "spawn/total " + means_text(out_trend, true)};
    }
    return {true, "spawn/total " + means_text(out_trend, true)};
  });
  report(8, "scale-in faster than scale-out", []() -> Verdict {
    auto grow = summarize(run_scale_out_bench(trend_config(kCompareInitial)));
    auto shrink = summarize(run_scale_in_bench(trend_config(kCompareInitial)));
    if (any_failed(grow) || any_failed(shrink) || grow.size() != shrink.size()) return {false, "failed trials"};
    std::string detail = "in vs out: ";
    bool pass = true;
    for (std::size_t i = 0; i < grow.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "d=%d %.4f<%.4f ", grow[i].delta, shrink[i].mean_total, grow[i].mean_total);
      detail += buf;
      pass &= shrink[i].mean_total < grow[i].mean_total;
    }
    return {pass, detail};
  });
  report(9, "CSV round-trip", csv_round_trip);

  std::printf("%d of 9 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
