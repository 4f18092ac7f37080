#include "elastic_group/spawner.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <random>

#include "elastic_group/collectives.hpp"
#include "elastic_group/digest.hpp"
#include "elastic_group/errors.hpp"
#include "json.hpp"

namespace eg {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

template <typename T>
T parse_number(const char* name, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string("malformed ") + name + "='" + text + "'");
  }
  return value;
}

std::string require_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr) throw ConfigError(std::string("bootstrap ticket is missing ") + name);
  return v;
}

std::string random_hex() {
  std::random_device rd;
  std::uint64_t v = (std::uint64_t{rd()} << 32) ^ rd();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Bytes json_bytes(const json& j) { return to_bytes(j.dump()); }

json parse_json(ByteView bytes, const char* what) {
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed ") + what + ": " + e.what());
  }
}

std::vector<int> missing_indices(const std::vector<std::optional<MemberDescriptor>>& registered) {
  std::vector<int> missing;
  for (std::size_t i = 0; i < registered.size(); ++i) {
    if (!registered[i]) missing.push_back(static_cast<int>(i));
  }
  return missing;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

// Everything the spawn root does alone: launch, collect registrations, welcome.
json run_spawn_root(const Group& group, const SpawnSpec& spec, const SpawnOptions& options) {
  Launcher& launcher = options.launcher ? *options.launcher : LocalLauncher::instance();
  auto& endpoint = group.node().endpoint();
  std::vector<pid_t> handles;
  std::vector<std::optional<MemberDescriptor>> registered(static_cast<std::size_t>(spec.count));
  std::vector<std::string> peers(static_cast<std::size_t>(spec.count));

  auto abort_children = [&](const std::string& why) {
    json abort = {{"ok", false}, {"error", why}};
    for (std::size_t i = 0; i < registered.size(); ++i) {
      if (!registered[i]) continue;
      if (auto ch = endpoint.channel(peers[i])) {
        transport::Envelope e{group.epoch(), kWelcomeTag, group.rank(), static_cast<std::int32_t>(i), json_bytes(abort)};
        try {
          endpoint.send(ch, e);
        } catch (const Error&) {
        }
      }
    }
    for (pid_t h : handles) launcher.terminate(h);
  };

  try {
    if (::access(spec.program.c_str(), X_OK) != 0) {
      throw SpawnError("executable not found or not executable: " + spec.program);
    }
    std::vector<std::string> labels =
        spec.host_labels.value_or(std::vector<std::string>(static_cast<std::size_t>(spec.count),
                                                           group.node().self().host_label));
    std::string spawn_id = random_hex();
    for (int i = 0; i < spec.count; ++i) {
      BootstrapTicket ticket{endpoint.address(), group.epoch(), i, spec.count, labels[static_cast<std::size_t>(i)],
                             spawn_id};
      handles.push_back(launcher.launch(spec.program, spec.args, child_environment(ticket.to_environment())));
    }

    auto deadline = Clock::now() + options.registration_timeout;
    int outstanding = spec.count;
    transport::Match match;
    match.tag = kRegisterTag;
    match.epoch = group.epoch();
    while (outstanding > 0) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) break;
      auto got = endpoint.try_recv(match, std::min(left, std::chrono::milliseconds(50)));
      if (!got) {
        for (int i = 0; i < spec.count; ++i) {
          if (registered[static_cast<std::size_t>(i)]) continue;
          if (auto st = launcher.exit_status(handles[static_cast<std::size_t>(i)])) {
            throw SpawnError("child " + std::to_string(i) + " exited with status " + std::to_string(*st) +
                                 " before registering; missing child_index values: " +
                                 join_ints(missing_indices(registered)),
                             missing_indices(registered));
          }
        }
        continue;
      }
      json reg;
      try {
        reg = json::parse(got->envelope.payload.begin(), got->envelope.payload.end());
        if (reg.at("spawn_id").get<std::string>() != spawn_id) continue;
        int idx = reg.at("index").get<int>();
        if (idx < 0 || idx >= spec.count || registered[static_cast<std::size_t>(idx)]) continue;
        MemberDescriptor d{reg.at("host").get<std::string>(), reg.at("addr").get<std::string>(),
                           reg.at("id").get<std::string>()};
        if (d.incarnation_id != got->peer) continue;
        registered[static_cast<std::size_t>(idx)] = d;
        peers[static_cast<std::size_t>(idx)] = got->peer;
        --outstanding;
      } catch (const json::exception&) {
        continue;
      }
    }
    if (outstanding > 0) {
      auto missing = missing_indices(registered);
      throw SpawnError("children failed to register within " + std::to_string(options.registration_timeout.count()) +
                           " ms; missing child_index values: " + join_ints(missing),
                       missing);
    }

    std::vector<MemberDescriptor> children;
    for (auto& r : registered) children.push_back(*r);
    json welcome = {{"ok", true},
                    {"parents", detail::encode_roster(group.roster())},
                    {"children", detail::encode_roster(children)},
                    {"root", group.rank()},
                    {"epoch", group.epoch()}};
    Bytes payload = json_bytes(welcome);
    for (int i = 0; i < spec.count; ++i) {
      auto ch = endpoint.channel(peers[static_cast<std::size_t>(i)]);
      if (!ch) throw SpawnError("child " + std::to_string(i) + " disconnected after registering", {i});
      endpoint.send(ch, transport::Envelope{group.epoch(), kWelcomeTag, group.rank(), i, payload});
    }
    return json{{"ok", true}, {"children", detail::encode_roster(children)}};
  } catch (const SpawnError& e) {
    abort_children(e.what());
    return json{{"ok", false}, {"error", e.what()}, {"missing", e.missing()}};
  } catch (const Error& e) {
    abort_children(e.what());
    return json{{"ok", false}, {"error", std::string("spawn failed: ") + e.what()}, {"missing", json::array()}};
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SpawnSpec / BootstrapTicket

void SpawnSpec::validate() const {
  if (program.empty()) throw ArgumentError("spawn program path is empty");
  if (count < 1) throw ArgumentError("spawn count must be at least 1, got " + std::to_string(count));
  if (host_labels) {
    if (host_labels->size() != static_cast<std::size_t>(count)) {
      throw ArgumentError("spawn host_labels has " + std::to_string(host_labels->size()) + " entries for count " +
                          std::to_string(count));
    }
    for (const auto& l : *host_labels) validate_host_label(l);
  }
}

Bytes SpawnSpec::digest() const {
  json j = {{"program", program}, {"args", args}, {"count", count}};
  j["labels"] = host_labels ? json(*host_labels) : json(nullptr);
  std::string text = j.dump();
  return sha256(ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::optional<BootstrapTicket> BootstrapTicket::from_environment() {
  const char* addr = std::getenv(kEnvParentAddr);
  if (addr == nullptr) return std::nullopt;
  BootstrapTicket t;
  t.parent_address = addr;
  t.parent_epoch = parse_number<Epoch>(kEnvParentEpoch, require_env(kEnvParentEpoch));
  t.child_index = parse_number<int>(kEnvChildIndex, require_env(kEnvChildIndex));
  t.child_count = parse_number<int>(kEnvChildCount, require_env(kEnvChildCount));
  t.host_label = require_env(kEnvHostLabel);
  if (const char* id = std::getenv(kEnvSpawnId)) t.spawn_id = id;
  if (t.child_count < 1 || t.child_index < 0 || t.child_index >= t.child_count) {
    throw ConfigError("child index " + std::to_string(t.child_index) + " outside [0, " +
                      std::to_string(t.child_count) + ")");
  }
  return t;
}

std::vector<std::string> BootstrapTicket::to_environment() const {
  return {
      std::string(kEnvParentAddr) + "=" + parent_address,
      std::string(kEnvParentEpoch) + "=" + std::to_string(parent_epoch),
      std::string(kEnvChildIndex) + "=" + std::to_string(child_index),
      std::string(kEnvChildCount) + "=" + std::to_string(child_count),
      std::string(kEnvHostLabel) + "=" + host_label,
      std::string(kEnvSpawnId) + "=" + spawn_id,
  };
}

// ---------------------------------------------------------------------------
// spawn / attach_parent

InterGroup spawn(const Group& group, int root, const SpawnSpec& spec, const SpawnOptions& options) {
  group.ensure_live();
  int n = group.size();
  if (root < 0 || root >= n) throw ArgumentError("spawn root " + std::to_string(root) + " out of range");

  Bytes mine = spec.digest();
  Bytes all = allgather(group, mine);
  for (int r = 0; r < n; ++r) {
    if (!std::equal(mine.begin(), mine.end(), all.begin() + static_cast<std::ptrdiff_t>(r * mine.size()))) {
      throw ProtocolError("spawn arguments differ between members (rank " + std::to_string(r) + ")");
    }
  }
  spec.validate();

  Bytes result;
  if (group.rank() == root) result = json_bytes(run_spawn_root(group, spec, options));
  result = broadcast(group, root, std::move(result));

  json j = parse_json(result, "spawn result");
  if (!j.value("ok", false)) {
    throw SpawnError(j.value("error", std::string("spawn failed")), j.value("missing", std::vector<int>{}));
  }
  auto children = detail::decode_roster(j.at("children").get<std::string>());
  return InterGroup(group, std::move(children), Side::parent_side, root, 0);
}

InterGroup attach_parent() {
  auto ticket = BootstrapTicket::from_environment();
  if (!ticket) throw NotSpawnedError();
  return attach_parent(*ticket);
}

InterGroup attach_parent(const BootstrapTicket& ticket, std::chrono::milliseconds welcome_timeout) {
  auto node = Node::create(ticket.host_label);
  auto& endpoint = node->endpoint();
  endpoint.advance_epoch(ticket.parent_epoch);
  auto channel = endpoint.connect(ticket.parent_address);

  json reg = {{"index", ticket.child_index},
              {"spawn_id", ticket.spawn_id},
              {"host", node->self().host_label},
              {"addr", node->self().listen_address},
              {"id", node->self().incarnation_id}};
  endpoint.send(channel, transport::Envelope{ticket.parent_epoch, kRegisterTag, ticket.child_index, -1, json_bytes(reg)});

  transport::Match match;
  match.tag = kWelcomeTag;
  match.peer = channel->peer_id();
  auto welcome = endpoint.recv(match, welcome_timeout);
  json j = parse_json(welcome.payload, "welcome");
  if (!j.value("ok", false)) throw SpawnError("parent aborted the spawn: " + j.value("error", std::string()));

  auto parents = detail::decode_roster(j.at("parents").get<std::string>());
  auto children = detail::decode_roster(j.at("children").get<std::string>());
  int root = j.at("root").get<int>();
  if (static_cast<int>(children.size()) != ticket.child_count ||
      children[static_cast<std::size_t>(ticket.child_index)].incarnation_id != node->self().incarnation_id) {
    throw ProtocolError("welcome roster does not place this child at its index");
  }
  Group local(node, ticket.parent_epoch, std::move(children), ticket.child_index);
  return InterGroup(std::move(local), std::move(parents), Side::child_side, 0, root);
}

}  // namespace eg
