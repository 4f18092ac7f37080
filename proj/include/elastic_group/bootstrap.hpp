#pragma once

// Initial group formation without an external launcher: members register with
// a rendezvous endpoint and receive the epoch-0 roster ordered by boot index.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "elastic_group/group.hpp"

namespace eg {

inline constexpr Tag kRendezvousRegisterTag = 1;
inline constexpr Tag kRendezvousRosterTag = 2;

inline constexpr const char* kEnvRendezvousAddr = "EG_RENDEZVOUS_ADDR";
inline constexpr const char* kEnvBootIndex = "EG_BOOT_INDEX";
inline constexpr const char* kEnvBootCount = "EG_BOOT_COUNT";

class Rendezvous {
 public:
  explicit Rendezvous(std::shared_ptr<transport::Endpoint> endpoint) : endpoint_(std::move(endpoint)) {}
  static Rendezvous listen(const std::string& bind_address = "127.0.0.1:0");

  const std::string& address() const { return endpoint_->address(); }
  transport::Endpoint& endpoint() const { return *endpoint_; }

  /// Waits for `count` registrations, then sends every member the roster.
  /// `poll` runs between waits and may throw to abort (e.g. a member died).
  std::vector<MemberDescriptor> form_group(int count, transport::Duration timeout,
                                           const std::function<void()>& poll = {});

 private:
  std::shared_ptr<transport::Endpoint> endpoint_;
};

/// Registers a fresh node with the rendezvous and returns its epoch-0 group
/// with all channels established.
Group join_initial(const std::string& rendezvous_address, int index, int count, const std::string& host_label,
                   transport::Duration timeout = std::chrono::seconds(60));

}  // namespace eg
