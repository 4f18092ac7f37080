#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "elastic_group/bench.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/spawner.hpp"

namespace {

std::string default_child() {
  std::error_code ec;
  auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) return "eg_worker";
  return (self.parent_path() / "eg_worker").string();
}

std::vector<int> stepped(int first, int last, int step) {
  std::vector<int> v;
  for (int d = first; d <= last; d += step) v.push_back(d);
  return v;
}

void print_summary(const std::vector<eg::BenchRecord>& records) {
  std::printf("%-10s %6s %10s %10s %10s %6s %6s\n", "scenario", "delta", "total_s", "spawn_s", "other_s", "hosts",
              "fail");
  for (const auto& s : eg::summarize(records)) {
    std::printf("%-10s %6d %10.4f %10.4f %10.4f %6d %6d\n", eg::scenario_name(s.scenario), s.delta, s.mean_total,
                s.mean_spawn, s.mean_other, s.hosts_used, s.failed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-out / scale-in timing harness for elastic worker groups"};
  app.require_subcommand(1);

  eg::BenchConfig config;
  config.child_program = default_child();
  std::vector<int> deltas;
  int initial = 0;
  bool cluster_scale = false;
  int step_timeout_s = 120;

  for (auto* sub : {app.add_subcommand("scale-out", "time growing a group by each delta"),
                    app.add_subcommand("scale-in", "time shrinking a group by each delta")}) {
    sub->add_option("--initial", initial, "initial group size");
    sub->add_option("--deltas", deltas, "processes added or removed per run")->delimiter(',');
    sub->add_option("--trials", config.trials, "trials per delta")->capture_default_str();
    sub->add_option("--slots-per-host", config.slots_per_host, "members per emulated host")->capture_default_str();
    sub->add_option("--child", config.child_program, "worker executable")->capture_default_str();
    sub->add_option("--out", config.output_path, "CSV output path");
    sub->add_flag("--cluster-scale", cluster_scale, "use the cluster-sized defaults (16 + up to 112, 128 - up to 108)");
    sub->add_option("--step-timeout", step_timeout_s, "seconds to wait for one scaling step")->capture_default_str();
  }
  CLI11_PARSE(app, argc, argv);

  bool out_mode = app.got_subcommand("scale-out");
  eg::Scenario scenario = out_mode ? eg::Scenario::scale_out : eg::Scenario::scale_in;
  if (out_mode) {
    config.initial = initial ? initial : 16;
    if (deltas.empty()) deltas = cluster_scale ? std::vector<int>{4, 16, 48, 80, 112} : std::vector<int>{4, 8, 16, 32, 48};
  } else {
    config.initial = initial ? initial : (cluster_scale ? 128 : 64);
    if (deltas.empty()) deltas = cluster_scale ? stepped(4, 108, 8) : stepped(4, 60, 8);
  }
  config.deltas = deltas;
  config.step_timeout = std::chrono::seconds(step_timeout_s);
  if (config.output_path.empty()) config.output_path = std::string(eg::scenario_name(scenario)) + ".csv";

  try {
    config.validate(scenario);
    eg::LocalLauncher::instance().adopt_orphans();
    auto records = out_mode ? eg::run_scale_out_bench(config) : eg::run_scale_in_bench(config);
    eg::emit_csv(records, config.output_path);
    print_summary(records);
    std::printf("wrote %zu rows to %s\n", records.size(), config.output_path.c_str());
    for (const auto& r : records) {
      if (r.failed()) return 1;
    }
    return 0;
  } catch (const eg::Error& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
}
