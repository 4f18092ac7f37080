#include "elastic_group/group.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <random>
#include <set>

#include "elastic_group/digest.hpp"
#include "elastic_group/errors.hpp"
#include "json.hpp"

namespace eg {

void validate_host_label(std::string_view label) {
  if (label.empty()) throw ArgumentError("host label must not be empty");
  if (label.size() > kMaxHostLabel) {
    throw ArgumentError("host label '" + std::string(label) + "' exceeds " + std::to_string(kMaxHostLabel) +
                        " bytes");
  }
  if (label.find('\0') != std::string_view::npos) throw ArgumentError("host label contains a NUL byte");
  if (label.size() == kMaxHostLabel && label.find_first_not_of('N') == std::string_view::npos) {
    throw ArgumentError("host label equals the reserved sentinel block");
  }
}

std::string new_incarnation_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = [] {
    std::random_device rd;
    return (std::uint64_t{rd()} << 32) ^ rd();
  }();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "p%d-%016llx-%llu", static_cast<int>(::getpid()),
                static_cast<unsigned long long>(salt), static_cast<unsigned long long>(counter.fetch_add(1)));
  return buf;
}

std::string roster_digest(const std::vector<MemberDescriptor>& roster) {
  std::string text;
  for (const auto& m : roster) {
    text += m.incarnation_id + "|" + m.host_label + "|" + m.listen_address + "\n";
  }
  return sha256_hex(text);
}

// ---------------------------------------------------------------------------
// Node

Node::Node(MemberDescriptor self, std::shared_ptr<transport::Endpoint> endpoint)
    : self_(std::move(self)), endpoint_(std::move(endpoint)) {}

std::shared_ptr<Node> Node::create(const std::string& host_label, const std::string& bind_address) {
  validate_host_label(host_label);
  std::string id = new_incarnation_id();
  auto endpoint = transport::Endpoint::listen(bind_address, id);
  MemberDescriptor self{host_label, endpoint->address(), id};
  return std::shared_ptr<Node>(new Node(std::move(self), std::move(endpoint)));
}

transport::ChannelPtr Node::channel_to(const MemberDescriptor& peer) const {
  if (peer.incarnation_id == self_.incarnation_id) throw ArgumentError("a member cannot open a channel to itself");
  if (auto ch = endpoint_->channel(peer.incarnation_id)) return ch;
  return endpoint_->connect(peer.listen_address, peer.incarnation_id);
}

void Node::send_to(const MemberDescriptor& peer, const transport::Envelope& envelope) const {
  endpoint_->send(channel_to(peer), envelope);
}

// ---------------------------------------------------------------------------
// Group

struct Group::State {
  std::shared_ptr<Node> node;
  Epoch epoch;
  std::vector<MemberDescriptor> roster;
  int my_rank;
  std::atomic<bool> retired{false};
  std::atomic<std::uint64_t> collective_seq{0};
};

Group::Group(std::shared_ptr<Node> node, Epoch epoch, std::vector<MemberDescriptor> roster, int my_rank)
    : state_(std::make_shared<State>()) {
  if (!node) throw ArgumentError("group needs a node");
  if (roster.empty()) throw ArgumentError("group roster is empty");
  if (my_rank < 0 || static_cast<std::size_t>(my_rank) >= roster.size()) {
    throw ArgumentError("rank " + std::to_string(my_rank) + " outside roster of " + std::to_string(roster.size()));
  }
  std::set<std::string_view> ids;
  for (const auto& m : roster) {
    if (!ids.insert(m.incarnation_id).second) throw ArgumentError("duplicate incarnation id " + m.incarnation_id);
  }
  if (roster[static_cast<std::size_t>(my_rank)].incarnation_id != node->self().incarnation_id) {
    throw ArgumentError("roster entry at my rank does not describe this node");
  }
  state_->node = std::move(node);
  state_->epoch = epoch;
  state_->roster = std::move(roster);
  state_->my_rank = my_rank;
}

int Group::rank() const {
  if (retired()) throw RetiredGroupError(state_->epoch);
  return state_->my_rank;
}

int Group::size() const {
  if (retired()) throw RetiredGroupError(state_->epoch);
  return static_cast<int>(state_->roster.size());
}

Epoch Group::epoch() const { return state_->epoch; }

const std::vector<MemberDescriptor>& Group::roster() const { return state_->roster; }

const MemberDescriptor& Group::member(int rank) const {
  if (rank < 0 || static_cast<std::size_t>(rank) >= state_->roster.size()) {
    throw ArgumentError("rank " + std::to_string(rank) + " out of range");
  }
  return state_->roster[static_cast<std::size_t>(rank)];
}

std::string Group::digest() const { return roster_digest(state_->roster); }

void Group::retire() const { state_->retired = true; }

bool Group::retired() const { return state_->retired.load(); }

void Group::ensure_live() const {
  if (retired()) throw RetiredGroupError(state_->epoch);
  Epoch floor = state_->node->endpoint().epoch();
  if (state_->epoch < floor) throw FencingError(state_->epoch, floor, "group superseded");
}

Node& Group::node() const { return *state_->node; }

const std::shared_ptr<Node>& Group::node_ptr() const { return state_->node; }

std::uint64_t Group::next_collective_seq() const { return state_->collective_seq.fetch_add(1); }

void Group::send(int dst_rank, Tag tag, Bytes payload) const {
  if (tag < transport::kUserTagFirst) throw ArgumentError("application tags start at 64");
  ensure_live();
  detail::group_send(*this, dst_rank, tag, std::move(payload));
}

Bytes Group::recv(int src_rank, Tag tag) const {
  if (tag < transport::kUserTagFirst) throw ArgumentError("application tags start at 64");
  ensure_live();
  return detail::group_recv(*this, src_rank, tag);
}

// ---------------------------------------------------------------------------
// InterGroup

InterGroup::InterGroup(Group local_group, std::vector<MemberDescriptor> remote_roster, Side side, int local_leader,
                       int remote_leader)
    : local_group_(std::move(local_group)),
      remote_roster_(std::move(remote_roster)),
      side_(side),
      local_leader_(local_leader),
      remote_leader_(remote_leader),
      released_(std::make_shared<std::atomic<bool>>(false)) {
  if (remote_roster_.empty()) throw ArgumentError("inter-group needs a non-empty remote side");
  if (local_leader_ < 0 || static_cast<std::size_t>(local_leader_) >= local_group_.roster().size() ||
      remote_leader_ < 0 || static_cast<std::size_t>(remote_leader_) >= remote_roster_.size()) {
    throw ArgumentError("inter-group leader out of range");
  }
  std::set<std::string_view> local_ids;
  for (const auto& m : local_group_.roster()) local_ids.insert(m.incarnation_id);
  for (const auto& m : remote_roster_) {
    if (local_ids.contains(m.incarnation_id)) throw ArgumentError("inter-group sides overlap at " + m.incarnation_id);
  }
}

void InterGroup::release() const { *released_ = true; }

bool InterGroup::released() const { return released_->load(); }

// ---------------------------------------------------------------------------
// detail

namespace detail {

void group_send(const Group& group, int dst_rank, Tag tag, Bytes payload) {
  const MemberDescriptor& peer = group.member(dst_rank);
  transport::Envelope e;
  e.epoch = group.epoch();
  e.tag = tag;
  e.src_rank = group.rank();
  e.dst_rank = dst_rank;
  e.payload = std::move(payload);
  group.node().send_to(peer, e);
}

Bytes group_recv(const Group& group, int src_rank, Tag tag) {
  const MemberDescriptor& peer = group.member(src_rank);
  transport::Match m;
  m.epoch = group.epoch();
  m.tag = tag;
  m.src_rank = src_rank;
  m.peer = peer.incarnation_id;
  return group.node().endpoint().recv(m, group.node().collective_timeout()).payload;
}

std::string encode_roster(const std::vector<MemberDescriptor>& roster) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : roster) j.push_back({m.incarnation_id, m.host_label, m.listen_address});
  return j.dump();
}

std::vector<MemberDescriptor> decode_roster(const std::string& json_text) {
  std::vector<MemberDescriptor> out;
  try {
    auto j = nlohmann::json::parse(json_text);
    for (const auto& row : j) {
      out.push_back(MemberDescriptor{row.at(1).get<std::string>(), row.at(2).get<std::string>(),
                                     row.at(0).get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed roster: ") + e.what());
  }
  return out;
}

}  // namespace detail

}  // namespace eg
