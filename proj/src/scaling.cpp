#include "elastic_group/scaling.hpp"

#include <atomic>
#include <chrono>
#include <cstring>

#include "elastic_group/errors.hpp"

namespace eg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

std::atomic<bool> g_new_process_consumed{false};

}  // namespace

Group scale_out(const Group& old_group, int num_add, const std::string& child_program,
                const std::optional<std::vector<std::string>>& host_labels, ScaleOutTimings* timings,
                const SpawnOptions& options) {
  old_group.ensure_live();
  SpawnSpec spec{child_program, {}, num_add, host_labels};

  auto t0 = Clock::now();
  barrier(old_group);
  auto t1 = Clock::now();
  InterGroup inter = spawn(old_group, 0, spec, options);
  auto t2 = Clock::now();
  Group merged = merge(inter, false);
  inter.release();
  auto t3 = Clock::now();

  if (timings) {
    timings->spawn_seconds = seconds_between(t1, t2);
    timings->other_seconds = seconds_between(t0, t1) + seconds_between(t2, t3);
    timings->total_seconds = timings->spawn_seconds + timings->other_seconds;
  }
  return merged;
}

Group init_new_process() {
  auto ticket = BootstrapTicket::from_environment();
  if (!ticket) throw NotSpawnedError();
  if (g_new_process_consumed.exchange(true)) {
    throw ProtocolError("init_new_process already consumed this process's inter-group");
  }
  InterGroup inter = attach_parent(*ticket);
  Group merged = merge(inter, true);
  inter.release();
  return merged;
}

Bytes host_block(std::string_view label) {
  validate_host_label(label);
  Bytes block(HostOccupancy::kWidth, 0);
  std::memcpy(block.data(), label.data(), label.size());
  return block;
}

Bytes sentinel_block() { return Bytes(HostOccupancy::kWidth, HostOccupancy::kSentinel); }

bool host_can_terminate(const HostOccupancy& occupancy, std::string_view my_host) {
  if (my_host.size() > HostOccupancy::kWidth) {
    throw ArgumentError("host label longer than " + std::to_string(HostOccupancy::kWidth) + " bytes");
  }
  if (occupancy.blocks.size() % HostOccupancy::kWidth != 0) {
    throw ArgumentError("host occupancy is not a whole number of blocks");
  }
  std::uint8_t mine[HostOccupancy::kWidth] = {};
  std::memcpy(mine, my_host.data(), my_host.size());
  const Bytes sentinel = sentinel_block();
  for (std::size_t i = 0; i < occupancy.size(); ++i) {
    ByteView b = occupancy.block(i);
    if (std::memcmp(b.data(), sentinel.data(), HostOccupancy::kWidth) == 0) continue;
    if (std::memcmp(b.data(), mine, HostOccupancy::kWidth) == 0) return false;
  }
  return true;
}

ScaleInOutcome scale_in(const Group& old_group, bool is_removing) {
  old_group.ensure_live();
  const std::string& my_host = old_group.node().self().host_label;
  Bytes block = is_removing ? sentinel_block() : host_block(my_host);

  HostOccupancy occupancy{allgather(old_group, block)};
  bool can_terminate = host_can_terminate(occupancy, my_host);
  SplitOutcome next = split(old_group, SplitKey{is_removing ? 1 : 0, old_group.rank()}, 1);
  return ScaleInOutcome{std::move(next), can_terminate};
}

}  // namespace eg
