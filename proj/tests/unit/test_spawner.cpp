#include <cstdlib>
#include <random>
#include <set>

#include "doctest.h"
#include "elastic_group/collectives.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/spawner.hpp"
#include "local_cluster.hpp"

using namespace eg;
using namespace std::chrono_literals;

namespace {

// Sets ticket variables for the lifetime of the object.
class ScopedEnv {
 public:
  explicit ScopedEnv(const std::vector<std::string>& entries) {
    for (const auto& e : entries) {
      auto eq = e.find('=');
      names_.push_back(e.substr(0, eq));
      ::setenv(names_.back().c_str(), e.substr(eq + 1).c_str(), 1);
    }
  }
  ~ScopedEnv() {
    for (const auto& n : names_) ::unsetenv(n.c_str());
  }

 private:
  std::vector<std::string> names_;
};

BootstrapTicket sample_ticket() { return BootstrapTicket{"127.0.0.1:5000", 7, 2, 4, "h2", "abc"}; }

}  // namespace

TEST_CASE("spawn spec validation") {
  SpawnSpec ok{"/bin/true", {}, 2, std::nullopt};
  CHECK_NOTHROW(ok.validate());
  SpawnSpec zero = ok;
  zero.count = 0;
  CHECK_THROWS_AS(zero.validate(), ArgumentError);
  SpawnSpec short_labels = ok;
  short_labels.host_labels = std::vector<std::string>{"h1"};
  CHECK_THROWS_AS(short_labels.validate(), ArgumentError);
  SpawnSpec bad_label = ok;
  bad_label.host_labels = std::vector<std::string>{"h1", std::string(64, 'N')};
  CHECK_THROWS_AS(bad_label.validate(), ArgumentError);
}

TEST_CASE("spec digest changes with every field") {
  SpawnSpec a{"/bin/true", {"x"}, 2, std::nullopt};
  std::set<Bytes> digests = {a.digest()};
  SpawnSpec b = a;
  b.count = 3;
  digests.insert(b.digest());
  b = a;
  b.args = {"y"};
  digests.insert(b.digest());
  b = a;
  b.program = "/bin/false";
  digests.insert(b.digest());
  b = a;
  b.host_labels = std::vector<std::string>{"h", "h"};
  digests.insert(b.digest());
  CHECK(digests.size() == 5);
  CHECK(a.digest() == SpawnSpec(a).digest());
}

TEST_CASE("bootstrap ticket travels through the environment") {
  CHECK_FALSE(BootstrapTicket::from_environment().has_value());
  BootstrapTicket t = sample_ticket();
  ScopedEnv env(t.to_environment());
  auto back = BootstrapTicket::from_environment();
  REQUIRE(back.has_value());
  CHECK(back->parent_address == t.parent_address);
  CHECK(back->parent_epoch == 7);
  CHECK(back->child_index == 2);
  CHECK(back->child_count == 4);
  CHECK(back->host_label == "h2");
  CHECK(back->spawn_id == "abc");
}

TEST_CASE("malformed tickets are configuration errors") {
  BootstrapTicket t = sample_ticket();
  {
    ScopedEnv env(t.to_environment());
    ScopedEnv bad({std::string(kEnvParentEpoch) + "=seven"});
    CHECK_THROWS_AS(BootstrapTicket::from_environment(), ConfigError);
  }
  {
    t.child_index = 4;
    ScopedEnv env(t.to_environment());
    CHECK_THROWS_AS(BootstrapTicket::from_environment(), ConfigError);
  }
  {
    ScopedEnv env({std::string(kEnvParentAddr) + "=127.0.0.1:1"});
    CHECK_THROWS_AS(BootstrapTicket::from_environment(), ConfigError);
  }
}

TEST_CASE("a process started without a ticket is not a spawned process") {
  CHECK_THROWS_AS(attach_parent(), NotSpawnedError);
}

TEST_CASE("child environment drops inherited ticket variables") {
  ScopedEnv env(sample_ticket().to_environment());
  auto child = child_environment({"EG_CHILD_INDEX=9"});
  int index_entries = 0;
  for (const auto& e : child) {
    CHECK_FALSE(e.starts_with("EG_PARENT_ADDR="));
    CHECK_FALSE(e.starts_with("EG_SPAWN_ID="));
    if (e.starts_with("EG_CHILD_INDEX=")) {
      ++index_entries;
      CHECK(e == "EG_CHILD_INDEX=9");
    }
  }
  CHECK(index_entries == 1);
}

TEST_CASE("local launcher reports exit status") {
  auto& launcher = LocalLauncher::instance();
  pid_t pid = launcher.launch("/bin/sh", {"-c", "exit 3"}, child_environment({}));
  CHECK(launcher.wait_exit(pid, 10s) == 3);
  pid_t sleeper = launcher.launch("/bin/sleep", {"30"}, child_environment({}));
  CHECK_FALSE(launcher.exit_status(sleeper).has_value());
  launcher.terminate(sleeper);
  CHECK(launcher.wait_exit(sleeper, 10s) == 128 + 9);
  CHECK_THROWS_AS(launcher.launch("/nonexistent/prog", {}, {}), SpawnError);
}

TEST_CASE("missing executable is a spawn error naming the path; the group survives") {
  auto groups = egtest::form_local_group(2);
  auto messages = egtest::on_each(2, [&](int i) {
    try {
      spawn(groups[static_cast<std::size_t>(i)], 0, SpawnSpec{"/no/such/worker", {}, 1, std::nullopt});
      return std::string();
    } catch (const SpawnError& e) {
      barrier(groups[static_cast<std::size_t>(i)]);
      return std::string(e.what());
    }
  });
  for (const auto& m : messages) CHECK(m.find("/no/such/worker") != std::string::npos);
}

TEST_CASE("children that exit before registering are reported by index") {
  auto groups = egtest::form_local_group(1);
  try {
    spawn(groups[0], 0, SpawnSpec{"/bin/true", {}, 2, std::nullopt});
    FAIL("spawn of non-registering children succeeded");
  } catch (const SpawnError& e) {
    CHECK_FALSE(e.missing().empty());
    for (int i : e.missing()) CHECK((i == 0 || i == 1));
  }
}

TEST_CASE("registration timeout reports every missing child") {
  auto groups = egtest::form_local_group(1);
  SpawnOptions options;
  options.registration_timeout = 300ms;
  try {
    spawn(groups[0], 0, SpawnSpec{"/bin/sleep", {"30"}, 2, std::nullopt}, options);
    FAIL("spawn of silent children succeeded");
  } catch (const SpawnError& e) {
    CHECK(e.missing() == std::vector<int>{0, 1});
    CHECK(std::string(e.what()).find("0,1") != std::string::npos);
  }
}

TEST_CASE("non-uniform spawn arguments are a protocol error at every member") {
  auto groups = egtest::form_local_group(3);
  auto errors = egtest::on_each(3, [&](int i) {
    try {
      spawn(groups[static_cast<std::size_t>(i)], 0, SpawnSpec{"/bin/true", {}, i == 2 ? 2 : 1, std::nullopt});
      return false;
    } catch (const ProtocolError&) {
      return true;
    }
  });
  for (bool e : errors) CHECK(e);
}

TEST_CASE("attach_parent: child side forms its local group in child_index order") {
  for (int count : {1, 4}) {
    auto parents = egtest::form_local_group(2, {"p0", "p1"});
    std::mutex mu;
    std::vector<std::pair<BootstrapTicket, InterGroup>> attached;
    std::mt19937 rng(static_cast<unsigned>(count));
    std::vector<int> delays;
    for (int i = 0; i < count; ++i) delays.push_back(static_cast<int>(rng() % 40));
    egtest::ThreadLauncher launcher([&](const BootstrapTicket& t) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delays[static_cast<std::size_t>(t.child_index)]));
      InterGroup inter = attach_parent(t);
      std::lock_guard lock(mu);
      attached.emplace_back(t, inter);
    });
    SpawnOptions options;
    options.launcher = &launcher;
    auto sides = egtest::on_each(2, [&](int i) {
      return spawn(parents[static_cast<std::size_t>(i)], 1, SpawnSpec{"/bin/true", {}, count, std::nullopt}, options);
    });
    launcher.join();
    CHECK(launcher.errors().empty());
    REQUIRE(static_cast<int>(attached.size()) == count);

    for (const auto& [ticket, inter] : attached) {
      CHECK(inter.side() == Side::child_side);
      CHECK(inter.local_group().size() == count);
      CHECK(inter.local_group().rank() == ticket.child_index);
      CHECK(inter.local_group().epoch() == parents[0].epoch());
      CHECK(inter.remote_roster() == parents[0].roster());
      CHECK(inter.remote_leader() == 1);
      CHECK(ticket.host_label == "p1");
    }
    for (const auto& side : sides) {
      CHECK(side.side() == Side::parent_side);
      REQUIRE(static_cast<int>(side.remote_roster().size()) == count);
      CHECK(side.local_leader() == 1);
      for (const auto& [ticket, inter] : attached) {
        CHECK(side.remote_roster()[static_cast<std::size_t>(ticket.child_index)].incarnation_id ==
              inter.local_group().node().self().incarnation_id);
      }
    }
  }
}

TEST_CASE("registrations carrying another spawn id are ignored") {
  auto parents = egtest::form_local_group(1);
  egtest::ThreadLauncher launcher([&](const BootstrapTicket& t) {
    BootstrapTicket forged = t;
    forged.spawn_id = "not-this-spawn";
    attach_parent(forged, 2000ms);
  });
  SpawnOptions options;
  options.launcher = &launcher;
  options.registration_timeout = 500ms;
  CHECK_THROWS_AS(spawn(parents[0], 0, SpawnSpec{"/bin/true", {}, 1, std::nullopt}, options), SpawnError);
  launcher.join();
}
