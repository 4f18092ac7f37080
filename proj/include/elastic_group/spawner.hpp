#pragma once

// Runtime process creation. The spawn root launches the children, collects
// their registrations, and hands back the parent side of an InterGroup; each
// child calls attach_parent() to obtain the child side.

#include <sys/types.h>

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "elastic_group/group.hpp"

namespace eg {

inline constexpr Tag kRegisterTag = 17;
inline constexpr Tag kWelcomeTag = 18;

// Environment carrying the bootstrap ticket into a child.
inline constexpr const char* kEnvParentAddr = "EG_PARENT_ADDR";
inline constexpr const char* kEnvParentEpoch = "EG_PARENT_EPOCH";
inline constexpr const char* kEnvChildIndex = "EG_CHILD_INDEX";
inline constexpr const char* kEnvHostLabel = "EG_HOST_LABEL";
inline constexpr const char* kEnvChildCount = "EG_CHILD_COUNT";
inline constexpr const char* kEnvSpawnId = "EG_SPAWN_ID";

struct SpawnSpec {
  std::string program;
  std::vector<std::string> args;
  int count = 1;
  std::optional<std::vector<std::string>> host_labels;

  /// Throws ArgumentError on count < 1, a label list of the wrong length, or a bad label.
  void validate() const;
  /// Digest used to check that every member passed the same spec.
  Bytes digest() const;
};

struct BootstrapTicket {
  std::string parent_address;
  Epoch parent_epoch = 0;
  int child_index = 0;
  int child_count = 1;
  std::string host_label;
  std::string spawn_id;

  /// nullopt when no ticket is present; ConfigError when one is present but malformed.
  static std::optional<BootstrapTicket> from_environment();
  /// "KEY=VALUE" entries for a child environment.
  std::vector<std::string> to_environment() const;
};

/// Starts child processes. Implementations decide where they run.
class Launcher {
 public:
  virtual ~Launcher() = default;
  /// Returns a handle (the pid for local launches). env entries are "KEY=VALUE".
  virtual pid_t launch(const std::string& program, const std::vector<std::string>& args,
                       const std::vector<std::string>& env) = 0;
  /// Exit status once the child has exited, nullopt while it runs.
  virtual std::optional<int> exit_status(pid_t handle) = 0;
  virtual void terminate(pid_t handle) = 0;
};

/// Runs children as local processes via posix_spawn and reaps them in the background.
class LocalLauncher final : public Launcher {
 public:
  static LocalLauncher& instance();

  pid_t launch(const std::string& program, const std::vector<std::string>& args,
               const std::vector<std::string>& env) override;
  /// As launch(), placing the child in process group `pgid` (0 starts a new group).
  pid_t launch_in_group(const std::string& program, const std::vector<std::string>& args,
                        const std::vector<std::string>& env, std::optional<pid_t> pgid);
  std::optional<int> exit_status(pid_t handle) override;
  void terminate(pid_t handle) override;

  /// Becomes the subreaper for orphaned descendants and reaps them too.
  void adopt_orphans();

  /// Waits for a child to exit; nullopt on timeout.
  std::optional<int> wait_exit(pid_t handle, std::chrono::milliseconds timeout);

 private:
  LocalLauncher() = default;
  void reap_locked();
  void ensure_reaper();

  std::mutex mutex_;
  std::map<pid_t, std::optional<int>> children_;
  bool adopt_ = false;
  bool reaper_started_ = false;
};

/// Current environment without ticket variables, plus `extra`.
std::vector<std::string> child_environment(const std::vector<std::string>& extra);

struct SpawnOptions {
  std::chrono::milliseconds registration_timeout{30000};
  Launcher* launcher = nullptr;  // LocalLauncher::instance() when null
};

/// Collective over `group`; only `root` creates processes. Returns the parent
/// side, whose remote roster lists children in child_index order.
InterGroup spawn(const Group& group, int root, const SpawnSpec& spec, const SpawnOptions& options = {});

/// Child side: registers with the spawn root using the ticket in the
/// environment. Throws NotSpawnedError without a ticket.
InterGroup attach_parent();
InterGroup attach_parent(const BootstrapTicket& ticket,
                         std::chrono::milliseconds welcome_timeout = std::chrono::milliseconds(90000));

}  // namespace eg
