#pragma once

// Collective operations over a Group. Every live member must call the same
// collective, with compatible arguments, in the same order. All of them use a
// star through rank 0 (or the broadcast root).

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "elastic_group/bytes.hpp"
#include "elastic_group/group.hpp"

namespace eg {

inline constexpr Tag kBarrierTag = 32;
inline constexpr Tag kBroadcastTag = 33;
inline constexpr Tag kAllgatherTag = 34;
inline constexpr Tag kMergeBridgeTag = 35;

struct SplitKey {
  int color = 0;
  int key = 0;
};

/// Handed to members whose split color retires instead of a successor group.
struct RetirementToken {
  Epoch retired_epoch = 0;
  int old_rank = 0;
};

using SplitOutcome = std::variant<Group, RetirementToken>;

void barrier(const Group& group);

Bytes broadcast(const Group& group, int root, Bytes payload);

/// Every member contributes one block of the same width; returns the rank-ordered concatenation.
Bytes allgather(const Group& group, ByteView block);

/// Partitions by color; within a color new ranks follow ascending (key, old rank).
/// Members of retiring_color get a RetirementToken, their old group is retired,
/// and the survivors fence them.
SplitOutcome split(const Group& group, SplitKey key, std::optional<int> retiring_color = std::nullopt);

/// New rank of every old rank under a split (pure; exposed for testing).
std::vector<int> split_ranks(std::span<const SplitKey> keys);

/// Joins both sides of an inter-group into one group at max(epochs)+1. The
/// low side keeps ranks 0..n_low-1, the high side follows. A full mesh of
/// channels exists when this returns.
Group merge(const InterGroup& inter, bool high);

/// Opens channels to every other member (lower incarnation id connects) and
/// waits until all are up.
void establish_mesh(const Group& group);

}  // namespace eg
