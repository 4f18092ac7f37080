#include "elastic_group/worker.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <iostream>

#include "elastic_group/bootstrap.hpp"
#include "elastic_group/collectives.hpp"
#include "elastic_group/errors.hpp"
#include "json.hpp"

namespace eg {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kProbeWidth = 512;

const char* op_name(Command::Op op) {
  switch (op) {
    case Command::Op::stop: return "stop";
    case Command::Op::probe: return "probe";
    case Command::Op::barrier: return "barrier";
    case Command::Op::scale_out: return "scale_out";
    case Command::Op::scale_in: return "scale_in";
  }
  return "?";
}

Command::Op op_from_name(const std::string& name) {
  for (auto op : {Command::Op::stop, Command::Op::probe, Command::Op::barrier, Command::Op::scale_out,
                  Command::Op::scale_in}) {
    if (name == op_name(op)) return op;
  }
  throw ProtocolError("unknown worker command '" + name + "'");
}

json member_json(const MemberReport& m) {
  return {{"rank", m.rank}, {"id", m.incarnation_id}, {"host", m.host_label}, {"pid", m.pid}, {"epoch", m.epoch},
          {"child_index", m.child_index}};
}

MemberReport member_from_json(const json& j) {
  return MemberReport{j.at("rank").get<int>(), j.at("id").get<std::string>(), j.at("host").get<std::string>(),
                      j.at("pid").get<int>(), j.at("epoch").get<Epoch>(), j.at("child_index").get<int>()};
}

std::vector<MemberReport> probe(const Group& group) {
  MemberReport mine{group.rank(), group.node().self().incarnation_id, group.node().self().host_label,
                    static_cast<int>(::getpid()), group.epoch(), -1};
  if (const char* index = std::getenv(kEnvChildIndex)) mine.child_index = std::atoi(index);
  std::string text = member_json(mine).dump();
  if (text.size() > kProbeWidth) throw ArgumentError("member report exceeds the probe block width");
  Bytes block(kProbeWidth, 0);
  std::copy(text.begin(), text.end(), block.begin());
  Bytes all = allgather(group, block);

  std::vector<MemberReport> out;
  for (int r = 0; r < group.size(); ++r) {
    auto first = all.begin() + static_cast<std::ptrdiff_t>(r * kProbeWidth);
    auto last = std::find(first, first + kProbeWidth, std::uint8_t{0});
    try {
      out.push_back(member_from_json(json::parse(first, last)));
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("malformed probe block: ") + e.what());
    }
  }
  return out;
}

void fill_identity(StepReport& report, const Group& group) {
  report.epoch = group.epoch();
  report.size = group.size();
  report.leader_id = group.member(0).incarnation_id;
}

}  // namespace

Bytes Command::encode() const {
  json j = {{"op", op_name(op)}, {"count", count}, {"program", program}, {"removing", removing}};
  j["host_labels"] = host_labels ? json(*host_labels) : json(nullptr);
  return to_bytes(j.dump());
}

Command Command::decode(ByteView bytes) {
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    Command c;
    c.op = op_from_name(j.at("op").get<std::string>());
    c.count = j.value("count", 0);
    c.program = j.value("program", std::string());
    c.removing = j.value("removing", std::vector<int>{});
    if (j.contains("host_labels") && !j["host_labels"].is_null()) {
      c.host_labels = j["host_labels"].get<std::vector<std::string>>();
    }
    return c;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed worker command: ") + e.what());
  }
}

Bytes StepReport::encode() const {
  json members_json = json::array();
  for (const auto& m : members) members_json.push_back(member_json(m));
  json j = {{"ok", ok},
            {"error", error},
            {"epoch", epoch},
            {"size", size},
            {"leader", leader_id},
            {"spawn_s", scale_out.spawn_seconds},
            {"other_s", scale_out.other_seconds},
            {"total_s", scale_out.total_seconds},
            {"scale_in_s", scale_in_seconds},
            {"members", members_json}};
  return to_bytes(j.dump());
}

StepReport StepReport::decode(ByteView bytes) {
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    StepReport r;
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.epoch = j.at("epoch").get<Epoch>();
    r.size = j.at("size").get<int>();
    r.leader_id = j.at("leader").get<std::string>();
    r.scale_out.spawn_seconds = j.at("spawn_s").get<double>();
    r.scale_out.other_seconds = j.at("other_s").get<double>();
    r.scale_out.total_seconds = j.at("total_s").get<double>();
    r.scale_in_seconds = j.at("scale_in_s").get<double>();
    for (const auto& m : j.at("members")) r.members.push_back(member_from_json(m));
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed step report: ") + e.what());
  }
}

StepOutcome run_step(const Group& group, const Command& command) {
  StepOutcome out;
  out.next = group;
  try {
    switch (command.op) {
      case Command::Op::stop:
        out.stop = true;
        break;
      case Command::Op::barrier:
        barrier(group);
        break;
      case Command::Op::probe:
        out.report.members = probe(group);
        break;
      case Command::Op::scale_out:
        barrier(group);
        out.next = scale_out(group, command.count, command.program, command.host_labels, &out.report.scale_out);
        break;
      case Command::Op::scale_in: {
        bool removing = std::find(command.removing.begin(), command.removing.end(), group.rank()) !=
                        command.removing.end();
        barrier(group);
        auto t0 = Clock::now();
        ScaleInOutcome outcome = scale_in(group, removing);
        out.report.scale_in_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        if (outcome.retired()) {
          out.next.reset();
          return out;
        }
        out.next = outcome.group();
        break;
      }
    }
  } catch (const Error& e) {
    out.report.ok = false;
    out.report.error = e.what();
    out.next = group;
  }
  fill_identity(out.report, *out.next);
  return out;
}

StepOutcome lead_step(const Group& group, const Command& command) {
  if (group.rank() != 0) throw ArgumentError("lead_step must run on rank 0");
  broadcast(group, 0, command.encode());
  return run_step(group, command);
}

StepOutcome follow_step(const Group& group) {
  Bytes bytes = broadcast(group, 0, {});
  return run_step(group, Command::decode(bytes));
}

std::optional<DriverLink> DriverLink::from_environment() {
  const char* addr = std::getenv(kEnvDriverAddr);
  const char* id = std::getenv(kEnvDriverId);
  if (addr == nullptr || id == nullptr) return std::nullopt;
  return DriverLink(addr, id);
}

transport::ChannelPtr DriverLink::channel(const Group& group) {
  auto& endpoint = group.node().endpoint();
  auto ch = endpoint.channel(id_);
  if (ch && ch->is_open()) return ch;
  return endpoint.connect(address_, id_);
}

Command DriverLink::next_command(const Group& group) {
  auto& endpoint = group.node().endpoint();
  channel(group);
  transport::Match match;
  match.tag = kCommandTag;
  match.peer = id_;
  for (;;) {
    if (auto got = endpoint.try_recv(match, std::chrono::milliseconds(500))) {
      return Command::decode(got->envelope.payload);
    }
    auto ch = endpoint.channel(id_);
    if (!ch || !ch->is_open()) throw ShutdownError("driver connection closed");
  }
}

void DriverLink::reply(const Group& group, const StepReport& report) {
  group.node().endpoint().send(channel(group), transport::Envelope{0, kReplyTag, group.rank(), -1, report.encode()});
}

int serve(Group group, std::optional<DriverLink> driver) {
  for (;;) {
    StepOutcome outcome;
    if (group.rank() == 0) {
      if (!driver) {
        std::cerr << "eg_worker: rank 0 has no driver (set " << kEnvDriverAddr << " and " << kEnvDriverId << ")\n";
        return 2;
      }
      Command command;
      try {
        command = driver->next_command(group);
      } catch (const ProtocolError& e) {
        StepReport bad;
        bad.ok = false;
        bad.error = e.what();
        fill_identity(bad, group);
        driver->reply(group, bad);
        continue;
      }
      outcome = lead_step(group, command);
    } else {
      outcome = follow_step(group);
    }
    if (outcome.retired()) return 0;
    group = *outcome.next;
    if (group.rank() == 0 && driver) driver->reply(group, outcome.report);
    if (outcome.stop) return 0;
  }
}

namespace {

int parse_env_int(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr) throw ConfigError(std::string(name) + " is not set");
  std::string s(v);
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(std::string("malformed ") + name + "='" + s + "'");
  return value;
}

}  // namespace

int worker_main() {
  std::optional<Group> group;
  try {
    auto ticket = BootstrapTicket::from_environment();
    if (ticket) {
      group = init_new_process();
    } else {
      const char* rendezvous = std::getenv(kEnvRendezvousAddr);
      const char* host = std::getenv(kEnvHostLabel);
      if (rendezvous == nullptr || host == nullptr) {
        throw ConfigError(std::string("neither a bootstrap ticket nor ") + kEnvRendezvousAddr + "/" + kEnvHostLabel +
                          " is present");
      }
      int index = parse_env_int(kEnvBootIndex);
      int count = parse_env_int(kEnvBootCount);
      group = join_initial(rendezvous, index, count, host);
    }
  } catch (const ConfigError& e) {
    std::cerr << "eg_worker: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "eg_worker: " << e.what() << "\n";
    return 2;
  }

  try {
    return serve(std::move(*group), DriverLink::from_environment());
  } catch (const Error& e) {
    std::cerr << "eg_worker: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace eg
