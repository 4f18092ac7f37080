#include <signal.h>
#include <spawn.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <string_view>

#include "elastic_group/errors.hpp"
#include "elastic_group/spawner.hpp"

extern char** environ;

namespace eg {

namespace {

int decode_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

bool is_ticket_variable(std::string_view entry) {
  static constexpr std::string_view kStripped[] = {
      "EG_PARENT_ADDR=", "EG_PARENT_EPOCH=", "EG_CHILD_INDEX=", "EG_CHILD_COUNT=", "EG_HOST_LABEL=",
      "EG_SPAWN_ID=",    "EG_BOOT_INDEX=",   "EG_BOOT_COUNT=",  "EG_RENDEZVOUS_ADDR=",
  };
  for (auto prefix : kStripped) {
    if (entry.starts_with(prefix)) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> child_environment(const std::vector<std::string>& extra) {
  std::vector<std::string> env;
  for (char** e = environ; e && *e; ++e) {
    if (!is_ticket_variable(*e)) env.emplace_back(*e);
  }
  env.insert(env.end(), extra.begin(), extra.end());
  return env;
}

LocalLauncher& LocalLauncher::instance() {
  static auto* launcher = new LocalLauncher();
  return *launcher;
}

pid_t LocalLauncher::launch(const std::string& program, const std::vector<std::string>& args,
                            const std::vector<std::string>& env) {
  return launch_in_group(program, args, env, std::nullopt);
}

pid_t LocalLauncher::launch_in_group(const std::string& program, const std::vector<std::string>& args,
                                     const std::vector<std::string>& env, std::optional<pid_t> pgid) {
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>(program.c_str()));
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (const auto& e : env) envp.push_back(const_cast<char*>(e.c_str()));
  envp.push_back(nullptr);

  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  short flags = POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETSIGDEF;
  sigset_t empty;
  sigemptyset(&empty);
  posix_spawnattr_setsigmask(&attr, &empty);
  sigset_t defaults;
  sigemptyset(&defaults);
  sigaddset(&defaults, SIGPIPE);
  sigaddset(&defaults, SIGCHLD);
  posix_spawnattr_setsigdefault(&attr, &defaults);
  if (pgid) {
    flags |= POSIX_SPAWN_SETPGROUP;
    posix_spawnattr_setpgroup(&attr, *pgid);
  }
  posix_spawnattr_setflags(&attr, flags);

  pid_t pid = 0;
  int rc = ::posix_spawn(&pid, program.c_str(), nullptr, &attr, argv.data(), envp.data());
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw SpawnError("cannot execute " + program + ": " + std::strerror(rc));

  std::lock_guard lock(mutex_);
  children_[pid] = std::nullopt;
  ensure_reaper();
  return pid;
}

void LocalLauncher::reap_locked() {
  int status = 0;
  if (adopt_) {
    pid_t pid;
    while ((pid = ::waitpid(-1, &status, WNOHANG)) > 0) children_[pid] = decode_status(status);
    return;
  }
  for (auto& [pid, st] : children_) {
    if (st) continue;
    if (::waitpid(pid, &status, WNOHANG) == pid) st = decode_status(status);
  }
}

void LocalLauncher::ensure_reaper() {
  if (reaper_started_) return;
  reaper_started_ = true;
  std::thread([this] {
    for (;;) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      std::lock_guard lock(mutex_);
      reap_locked();
    }
  }).detach();
}

std::optional<int> LocalLauncher::exit_status(pid_t handle) {
  std::lock_guard lock(mutex_);
  reap_locked();
  auto it = children_.find(handle);
  if (it == children_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> LocalLauncher::wait_exit(pid_t handle, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto st = exit_status(handle)) return st;
    if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

void LocalLauncher::terminate(pid_t handle) {
  if (handle > 0) ::kill(handle, SIGKILL);
}

void LocalLauncher::adopt_orphans() {
  ::prctl(PR_SET_CHILD_SUBREAPER, 1);
  std::lock_guard lock(mutex_);
  adopt_ = true;
  ensure_reaper();
}

}  // namespace eg
