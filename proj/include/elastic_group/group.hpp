#pragma once

// Intra- and inter-group identity: who is in a group, at which epoch, and
// which rank the calling process holds.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "elastic_group/bytes.hpp"
#include "elastic_group/transport.hpp"

namespace eg {

using transport::Epoch;
using transport::Tag;

/// Longest host label accepted (the fixed host block width).
inline constexpr std::size_t kMaxHostLabel = 64;

struct MemberDescriptor {
  std::string host_label;
  std::string listen_address;
  std::string incarnation_id;

  bool operator==(const MemberDescriptor&) const = default;
};

/// Throws ArgumentError unless the label is 1..64 bytes, has no NUL byte, and
/// is not the reserved sentinel (64 'N' characters).
void validate_host_label(std::string_view label);

/// Fresh id, unique across processes and calls.
std::string new_incarnation_id();

/// SHA-256 hex over "incarnation_id|host_label|listen_address\n" per member in rank order.
std::string roster_digest(const std::vector<MemberDescriptor>& roster);

/// The per-process attachment point: one endpoint plus its own descriptor.
class Node {
 public:
  static std::shared_ptr<Node> create(const std::string& host_label,
                                      const std::string& bind_address = "127.0.0.1:0");

  const MemberDescriptor& self() const { return self_; }
  transport::Endpoint& endpoint() const { return *endpoint_; }

  /// Existing channel to the peer, or a new one using the tie-break connect.
  transport::ChannelPtr channel_to(const MemberDescriptor& peer) const;
  void send_to(const MemberDescriptor& peer, const transport::Envelope& envelope) const;

  transport::Duration collective_timeout() const { return collective_timeout_; }
  void set_collective_timeout(transport::Duration timeout) { collective_timeout_ = timeout; }

  void close() { endpoint_->close(); }

 private:
  Node(MemberDescriptor self, std::shared_ptr<transport::Endpoint> endpoint);

  MemberDescriptor self_;
  std::shared_ptr<transport::Endpoint> endpoint_;
  transport::Duration collective_timeout_{120000};
};

/// An epoch-versioned, ordered roster plus the caller's rank. Copies share the
/// same identity; retire() on any copy retires all of them.
class Group {
 public:
  Group(std::shared_ptr<Node> node, Epoch epoch, std::vector<MemberDescriptor> roster, int my_rank);

  int rank() const;
  int size() const;
  Epoch epoch() const;
  const std::vector<MemberDescriptor>& roster() const;
  const MemberDescriptor& member(int rank) const;
  std::string digest() const;

  /// Idempotent. Afterwards every operation fails with RetiredGroupError.
  void retire() const;
  bool retired() const;

  /// Throws RetiredGroupError, or FencingError when a newer epoch superseded this group.
  void ensure_live() const;

  Node& node() const;
  const std::shared_ptr<Node>& node_ptr() const;

  /// Point-to-point application messaging inside the group (tag >= 64).
  void send(int dst_rank, Tag tag, Bytes payload) const;
  Bytes recv(int src_rank, Tag tag) const;

  /// Per-group sequence number stamped into collective messages.
  std::uint64_t next_collective_seq() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

enum class Side { parent_side, child_side };

/// Two disjoint groups linked by spawn, before they are merged.
class InterGroup {
 public:
  InterGroup(Group local_group, std::vector<MemberDescriptor> remote_roster, Side side, int local_leader,
             int remote_leader);

  const Group& local_group() const { return local_group_; }
  const std::vector<MemberDescriptor>& remote_roster() const { return remote_roster_; }
  Side side() const { return side_; }
  /// Local rank that talks to the remote side during merge.
  int local_leader() const { return local_leader_; }
  /// Index into remote_roster of the remote side's leader.
  int remote_leader() const { return remote_leader_; }

  /// Frees the linkage; further merges on it fail.
  void release() const;
  bool released() const;

 private:
  Group local_group_;
  std::vector<MemberDescriptor> remote_roster_;
  Side side_;
  int local_leader_;
  int remote_leader_;
  std::shared_ptr<std::atomic<bool>> released_;
};

namespace detail {

// Library-internal messaging that bypasses the application tag check.
void group_send(const Group& group, int dst_rank, Tag tag, Bytes payload);
Bytes group_recv(const Group& group, int src_rank, Tag tag);

std::string encode_roster(const std::vector<MemberDescriptor>& roster);
std::vector<MemberDescriptor> decode_roster(const std::string& json_text);

}  // namespace detail

}  // namespace eg
