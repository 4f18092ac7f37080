#include "elastic_group/collectives.hpp"

#include <algorithm>
#include <numeric>

#include "elastic_group/errors.hpp"

namespace eg {

namespace {

enum class Op : std::uint8_t {
  barrier_arrive = 1,
  barrier_release = 2,
  broadcast = 3,
  gather = 4,
  gather_result = 5,
};

constexpr std::size_t kOpHeader = 9;

Bytes with_header(Op op, std::uint64_t seq, ByteView body = {}) {
  Bytes out;
  out.reserve(kOpHeader + body.size());
  out.push_back(static_cast<std::uint8_t>(op));
  put_u64(out, seq);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

// Checks the collective header and returns the body.
ByteView expect_header(const Bytes& msg, Op op, std::uint64_t seq, int from) {
  if (msg.size() < kOpHeader) throw ProtocolError("truncated collective message from rank " + std::to_string(from));
  if (msg[0] != static_cast<std::uint8_t>(op) || get_u64(msg.data() + 1) != seq) {
    throw ProtocolError("collective mismatch with rank " + std::to_string(from) + ": expected op " +
                        std::to_string(static_cast<int>(op)) + " seq " + std::to_string(seq) + ", got op " +
                        std::to_string(msg[0]) + " seq " + std::to_string(get_u64(msg.data() + 1)));
  }
  return ByteView(msg.data() + kOpHeader, msg.size() - kOpHeader);
}

std::int32_t read_i32(const std::uint8_t* p) { return static_cast<std::int32_t>(get_u32(p)); }

}  // namespace

void barrier(const Group& group) {
  group.ensure_live();
  std::uint64_t seq = group.next_collective_seq();
  int n = group.size();
  if (n == 1) return;
  if (group.rank() != 0) {
    detail::group_send(group, 0, kBarrierTag, with_header(Op::barrier_arrive, seq));
    expect_header(detail::group_recv(group, 0, kBarrierTag), Op::barrier_release, seq, 0);
    return;
  }
  for (int r = 1; r < n; ++r) expect_header(detail::group_recv(group, r, kBarrierTag), Op::barrier_arrive, seq, r);
  for (int r = 1; r < n; ++r) detail::group_send(group, r, kBarrierTag, with_header(Op::barrier_release, seq));
}

Bytes broadcast(const Group& group, int root, Bytes payload) {
  group.ensure_live();
  int n = group.size();
  if (root < 0 || root >= n) throw ArgumentError("broadcast root " + std::to_string(root) + " out of range");
  std::uint64_t seq = group.next_collective_seq();
  if (n == 1) return payload;
  if (group.rank() == root) {
    Bytes msg = with_header(Op::broadcast, seq, payload);
    for (int r = 0; r < n; ++r) {
      if (r != root) detail::group_send(group, r, kBroadcastTag, msg);
    }
    return payload;
  }
  Bytes msg = detail::group_recv(group, root, kBroadcastTag);
  ByteView body = expect_header(msg, Op::broadcast, seq, root);
  return Bytes(body.begin(), body.end());
}

Bytes allgather(const Group& group, ByteView block) {
  group.ensure_live();
  std::uint64_t seq = group.next_collective_seq();
  int n = group.size();
  std::size_t width = block.size();
  if (n == 1) return Bytes(block.begin(), block.end());

  if (group.rank() != 0) {
    Bytes body;
    put_u64(body, width);
    body.insert(body.end(), block.begin(), block.end());
    detail::group_send(group, 0, kAllgatherTag, with_header(Op::gather, seq, body));
    Bytes reply = detail::group_recv(group, 0, kAllgatherTag);
    ByteView rest = expect_header(reply, Op::gather_result, seq, 0);
    if (rest.empty()) throw ProtocolError("empty allgather result");
    if (rest[0] != 0) throw ProtocolError(to_string(rest.subspan(1)));
    return Bytes(rest.begin() + 1, rest.end());
  }

  Bytes result(width * static_cast<std::size_t>(n));
  std::copy(block.begin(), block.end(), result.begin());
  std::string error;
  for (int r = 1; r < n; ++r) {
    Bytes msg = detail::group_recv(group, r, kAllgatherTag);
    ByteView body = expect_header(msg, Op::gather, seq, r);
    if (body.size() < 8) throw ProtocolError("truncated allgather block from rank " + std::to_string(r));
    std::uint64_t w = get_u64(body.data());
    if (w != width || body.size() != 8 + w) {
      if (error.empty()) {
        error = "allgather width disagreement: rank 0 uses " + std::to_string(width) + " bytes, rank " +
                std::to_string(r) + " uses " + std::to_string(w);
      }
      continue;
    }
    std::copy(body.begin() + 8, body.end(), result.begin() + static_cast<std::ptrdiff_t>(width * r));
  }

  Bytes reply;
  if (error.empty()) {
    reply.push_back(0);
    reply.insert(reply.end(), result.begin(), result.end());
  } else {
    reply.push_back(1);
    reply.insert(reply.end(), error.begin(), error.end());
  }
  Bytes msg = with_header(Op::gather_result, seq, reply);
  for (int r = 1; r < n; ++r) detail::group_send(group, r, kAllgatherTag, msg);
  if (!error.empty()) throw ProtocolError(error);
  return result;
}

std::vector<int> split_ranks(std::span<const SplitKey> keys) {
  std::vector<int> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (keys[a].color != keys[b].color) return keys[a].color < keys[b].color;
    if (keys[a].key != keys[b].key) return keys[a].key < keys[b].key;
    return a < b;
  });
  std::vector<int> new_rank(keys.size());
  int next = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && keys[order[i]].color != keys[order[i - 1]].color) next = 0;
    new_rank[order[i]] = next++;
  }
  return new_rank;
}

SplitOutcome split(const Group& group, SplitKey key, std::optional<int> retiring_color) {
  group.ensure_live();
  Bytes block;
  put_u32(block, static_cast<std::uint32_t>(key.color));
  put_u32(block, static_cast<std::uint32_t>(key.key));
  Bytes all = allgather(group, block);

  int n = group.size();
  std::vector<SplitKey> keys(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    keys[r].color = read_i32(all.data() + 8 * r);
    keys[r].key = read_i32(all.data() + 8 * r + 4);
    if (keys[r].color < 0) throw ArgumentError("split color of rank " + std::to_string(r) + " is negative");
  }
  std::vector<int> new_rank = split_ranks(keys);

  int me = group.rank();
  int my_color = keys[me].color;
  std::vector<MemberDescriptor> roster;
  std::vector<int> members;
  for (int r = 0; r < n; ++r) {
    if (keys[r].color == my_color) members.push_back(r);
  }
  roster.resize(members.size());
  for (int r : members) roster[static_cast<std::size_t>(new_rank[r])] = group.member(r);

  Epoch next_epoch = group.epoch() + 1;
  auto& endpoint = group.node().endpoint();
  endpoint.advance_epoch(next_epoch);

  if (retiring_color && my_color == *retiring_color) {
    group.retire();
    return RetirementToken{group.epoch(), me};
  }
  if (retiring_color) {
    for (int r = 0; r < n; ++r) {
      if (keys[r].color == *retiring_color) endpoint.fence_peer(group.member(r).incarnation_id, next_epoch);
    }
  }
  return Group(group.node_ptr(), next_epoch, std::move(roster), new_rank[me]);
}

void establish_mesh(const Group& group) {
  const auto& self = group.node().self();
  auto& endpoint = group.node().endpoint();
  for (const auto& m : group.roster()) {
    if (self.incarnation_id < m.incarnation_id) group.node().channel_to(m);
  }
  for (const auto& m : group.roster()) {
    if (m.incarnation_id < self.incarnation_id) endpoint.await_channel(m.incarnation_id, group.node().collective_timeout());
  }
}

Group merge(const InterGroup& inter, bool high) {
  if (inter.released()) throw ProtocolError("inter-group already released");
  const Group& local = inter.local_group();
  local.ensure_live();

  std::uint8_t flag = high ? 1 : 0;
  Bytes flags = allgather(local, ByteView(&flag, 1));
  bool local_uniform = std::all_of(flags.begin(), flags.end(), [&](std::uint8_t f) { return f == flag; });

  // Leaders swap {uniform, high, epoch, size} across the bridge, then share the verdict locally.
  Bytes verdict;
  if (local.rank() == inter.local_leader()) {
    const MemberDescriptor& bridge = inter.remote_roster()[static_cast<std::size_t>(inter.remote_leader())];
    transport::Envelope out;
    out.epoch = local.epoch();
    out.tag = kMergeBridgeTag;
    out.src_rank = local.rank();
    out.dst_rank = inter.remote_leader();
    out.payload.push_back(local_uniform ? 1 : 0);
    out.payload.push_back(flag);
    put_u64(out.payload, local.epoch());
    put_u32(out.payload, static_cast<std::uint32_t>(local.size()));
    local.node().send_to(bridge, out);

    transport::Match m;
    m.tag = kMergeBridgeTag;
    m.peer = bridge.incarnation_id;
    auto in = local.node().endpoint().recv(m, local.node().collective_timeout());
    if (in.payload.size() != 14) throw ProtocolError("malformed merge bridge message");
    bool remote_uniform = in.payload[0] == 1;
    std::uint8_t remote_high = in.payload[1];
    Epoch remote_epoch = get_u64(in.payload.data() + 2);
    std::uint32_t remote_size = get_u32(in.payload.data() + 10);

    std::uint8_t status = 0;
    if (!local_uniform || !remote_uniform) {
      status = 2;
    } else if (remote_high == flag) {
      status = 1;
    } else if (remote_size != inter.remote_roster().size()) {
      status = 3;
    }
    verdict.push_back(status);
    verdict.push_back(remote_high);
    put_u64(verdict, remote_epoch);
  }
  verdict = broadcast(local, inter.local_leader(), std::move(verdict));
  if (verdict.size() != 10) throw ProtocolError("malformed merge verdict");
  switch (verdict[0]) {
    case 0:
      break;
    case 1:
      throw ProtocolError("both sides of the merge passed high=" + std::string(high ? "true" : "false"));
    case 2:
      throw ProtocolError("members of one merge side disagree on the high flag");
    default:
      throw ProtocolError("merge sides disagree on the remote roster");
  }
  Epoch remote_epoch = get_u64(verdict.data() + 2);
  Epoch merged_epoch = std::max(local.epoch(), remote_epoch) + 1;

  const auto& low = high ? inter.remote_roster() : local.roster();
  const auto& upper = high ? local.roster() : inter.remote_roster();
  std::vector<MemberDescriptor> roster(low);
  roster.insert(roster.end(), upper.begin(), upper.end());
  int my_rank = high ? static_cast<int>(low.size()) + local.rank() : local.rank();

  local.node().endpoint().advance_epoch(merged_epoch);
  Group merged(local.node_ptr(), merged_epoch, std::move(roster), my_rank);
  establish_mesh(merged);
  barrier(merged);
  return merged;
}

}  // namespace eg
