#include "elastic_group/bootstrap.hpp"

#include <algorithm>

#include "elastic_group/collectives.hpp"
#include "elastic_group/errors.hpp"
#include "json.hpp"

namespace eg {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

Rendezvous Rendezvous::listen(const std::string& bind_address) {
  return Rendezvous(transport::Endpoint::listen(bind_address, new_incarnation_id()));
}

std::vector<MemberDescriptor> Rendezvous::form_group(int count, transport::Duration timeout,
                                                     const std::function<void()>& poll) {
  if (count < 1) throw ArgumentError("group size must be at least 1");
  std::vector<std::optional<MemberDescriptor>> slots(static_cast<std::size_t>(count));
  int outstanding = count;
  auto deadline = Clock::now() + timeout;
  transport::Match match;
  match.tag = kRendezvousRegisterTag;

  while (outstanding > 0) {
    auto left = std::chrono::duration_cast<transport::Duration>(deadline - Clock::now());
    if (left.count() <= 0) {
      throw TimeoutError(std::to_string(outstanding) + " of " + std::to_string(count) +
                         " initial members never registered");
    }
    auto got = endpoint_->try_recv(match, std::min(left, transport::Duration(100)));
    if (!got) {
      if (poll) poll();
      continue;
    }
    try {
      json reg = json::parse(got->envelope.payload.begin(), got->envelope.payload.end());
      int index = reg.at("index").get<int>();
      if (reg.at("count").get<int>() != count || index < 0 || index >= count) {
        throw ProtocolError("registration index " + std::to_string(index) + " does not fit a group of " +
                            std::to_string(count));
      }
      MemberDescriptor d{reg.at("host").get<std::string>(), reg.at("addr").get<std::string>(),
                         reg.at("id").get<std::string>()};
      if (d.incarnation_id != got->peer) throw ProtocolError("registration id does not match its channel");
      auto& slot = slots[static_cast<std::size_t>(index)];
      if (slot) throw ProtocolError("boot index " + std::to_string(index) + " registered twice");
      slot = std::move(d);
      --outstanding;
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed registration: ") + e.what());
    }
  }

  std::vector<MemberDescriptor> roster;
  for (auto& s : slots) roster.push_back(std::move(*s));
  Bytes payload = to_bytes(detail::encode_roster(roster));
  for (int i = 0; i < count; ++i) {
    auto ch = endpoint_->channel(roster[static_cast<std::size_t>(i)].incarnation_id);
    if (!ch) throw DeliveryError(roster[static_cast<std::size_t>(i)].incarnation_id, "member disconnected");
    endpoint_->send(ch, transport::Envelope{0, kRendezvousRosterTag, -1, i, payload});
  }
  return roster;
}

Group join_initial(const std::string& rendezvous_address, int index, int count, const std::string& host_label,
                   transport::Duration timeout) {
  if (count < 1 || index < 0 || index >= count) {
    throw ArgumentError("boot index " + std::to_string(index) + " outside [0, " + std::to_string(count) + ")");
  }
  validate_host_label(host_label);
  auto node = Node::create(host_label);
  auto& endpoint = node->endpoint();
  auto channel = endpoint.connect(rendezvous_address);

  json reg = {{"index", index},
              {"count", count},
              {"host", host_label},
              {"addr", node->self().listen_address},
              {"id", node->self().incarnation_id}};
  endpoint.send(channel, transport::Envelope{0, kRendezvousRegisterTag, index, -1, to_bytes(reg.dump())});

  transport::Match match;
  match.tag = kRendezvousRosterTag;
  match.peer = channel->peer_id();
  auto env = endpoint.recv(match, timeout);
  auto roster = detail::decode_roster(to_string(env.payload));
  if (static_cast<int>(roster.size()) != count ||
      roster[static_cast<std::size_t>(index)].incarnation_id != node->self().incarnation_id) {
    throw ProtocolError("rendezvous roster does not place this member at its boot index");
  }
  Group group(node, 0, std::move(roster), index);
  establish_mesh(group);
  return group;
}

}  // namespace eg
