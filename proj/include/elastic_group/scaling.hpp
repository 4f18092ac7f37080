#pragma once

// The three elastic entry points: grow a running group with freshly spawned
// processes, join such a group from the spawned side, and shrink a group while
// deciding which hosts may be shut down.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "elastic_group/collectives.hpp"
#include "elastic_group/group.hpp"
#include "elastic_group/spawner.hpp"

namespace eg {

struct ScaleOutTimings {
  double spawn_seconds = 0;  // process creation + registration
  double other_seconds = 0;  // barrier + merge + mesh
  double total_seconds = 0;
};

/// Collective over old_group. Spawns num_add copies of child_program from rank 0
/// and merges them in; original rank i keeps rank i, child j becomes
/// old_group.size() + j. old_group stays usable if spawning fails.
Group scale_out(const Group& old_group, int num_add, const std::string& child_program,
                const std::optional<std::vector<std::string>>& host_labels = std::nullopt,
                ScaleOutTimings* timings = nullptr, const SpawnOptions& options = {});

/// Spawned side of scale_out. Single use per process.
Group init_new_process();

/// Rank-ordered, fixed-width host blocks gathered during scale-in.
struct HostOccupancy {
  static constexpr std::size_t kWidth = 64;
  static constexpr std::uint8_t kSentinel = 'N';
  Bytes blocks;

  std::size_t size() const { return blocks.size() / kWidth; }
  ByteView block(std::size_t i) const { return ByteView(blocks.data() + i * kWidth, kWidth); }
};

/// Zero-padded label block; ArgumentError for labels validate_host_label rejects.
Bytes host_block(std::string_view label);
Bytes sentinel_block();

/// True iff no non-sentinel block equals the zero-padded my_host.
bool host_can_terminate(const HostOccupancy& occupancy, std::string_view my_host);

struct ScaleInOutcome {
  std::variant<Group, RetirementToken> new_group;
  bool can_terminate_host = false;

  bool retired() const { return std::holds_alternative<RetirementToken>(new_group); }
  const Group& group() const { return std::get<Group>(new_group); }
};

/// Collective over old_group. Removing members get a RetirementToken and are
/// fenced off; the rest keep their relative order in a group at epoch + 1.
ScaleInOutcome scale_in(const Group& old_group, bool is_removing);

}  // namespace eg
