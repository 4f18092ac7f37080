#pragma once

// The reusable worker: joins a group (initial bootstrap or spawned child) and
// executes commands that rank 0 receives from a driver and broadcasts.

#include <optional>
#include <string>
#include <vector>

#include "elastic_group/group.hpp"
#include "elastic_group/scaling.hpp"

namespace eg {

inline constexpr Tag kCommandTag = 3;
inline constexpr Tag kReplyTag = 4;

inline constexpr const char* kEnvDriverAddr = "EG_DRIVER_ADDR";
inline constexpr const char* kEnvDriverId = "EG_DRIVER_ID";

struct Command {
  enum class Op { stop, probe, barrier, scale_out, scale_in };

  Op op = Op::stop;
  int count = 0;                                        // scale_out
  std::string program;                                  // scale_out
  std::optional<std::vector<std::string>> host_labels;  // scale_out
  std::vector<int> removing;                            // scale_in, by current rank

  Bytes encode() const;
  /// ProtocolError on malformed input.
  static Command decode(ByteView bytes);
};

using WorkerScript = std::vector<Command>;

struct MemberReport {
  int rank = 0;
  std::string incarnation_id;
  std::string host_label;
  int pid = 0;
  Epoch epoch = 0;
  int child_index = -1;  // spawn ticket index, -1 for initial members

  bool operator==(const MemberReport&) const = default;
};

/// What rank 0 tells the driver after a step.
struct StepReport {
  bool ok = true;
  std::string error;
  Epoch epoch = 0;
  int size = 0;
  std::string leader_id;
  ScaleOutTimings scale_out;
  double scale_in_seconds = 0;
  std::vector<MemberReport> members;  // probe only

  Bytes encode() const;
  static StepReport decode(ByteView bytes);
};

struct StepOutcome {
  std::optional<Group> next;  // empty when this member retired
  StepReport report;
  bool stop = false;

  bool retired() const { return !next.has_value(); }
};

/// Runs one command on every member. Library errors leave the group unchanged
/// and are reported in StepReport rather than thrown.
StepOutcome run_step(const Group& group, const Command& command);
/// Rank 0: broadcast the command, then run it.
StepOutcome lead_step(const Group& group, const Command& command);
/// Other ranks: receive the command from rank 0, then run it.
StepOutcome follow_step(const Group& group);

/// Rank 0's connection to the driver.
class DriverLink {
 public:
  DriverLink(std::string address, std::string driver_id) : address_(std::move(address)), id_(std::move(driver_id)) {}
  /// Built from EG_DRIVER_ADDR / EG_DRIVER_ID; nullopt if unset.
  static std::optional<DriverLink> from_environment();

  /// Blocks until the driver sends a command. ShutdownError if the driver goes away.
  Command next_command(const Group& group);
  void reply(const Group& group, const StepReport& report);

 private:
  transport::ChannelPtr channel(const Group& group);

  std::string address_;
  std::string id_;
};

/// Command loop until stop or retirement. Returns the process exit status.
int serve(Group group, std::optional<DriverLink> driver);

/// Entry point of the worker executable.
int worker_main();

}  // namespace eg
