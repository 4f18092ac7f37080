#include <set>

#include "doctest.h"
#include "elastic_group/collectives.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/group.hpp"
#include "local_cluster.hpp"

using namespace eg;

TEST_CASE("host labels: length, NUL and the sentinel are rejected") {
  CHECK_NOTHROW(validate_host_label("node-1"));
  CHECK_NOTHROW(validate_host_label(std::string(64, 'x')));
  CHECK_THROWS_AS(validate_host_label(""), ArgumentError);
  CHECK_THROWS_AS(validate_host_label(std::string(65, 'x')), ArgumentError);
  CHECK_THROWS_AS(validate_host_label(std::string("a\0b", 3)), ArgumentError);
  CHECK_THROWS_AS(validate_host_label(std::string(64, 'N')), ArgumentError);
  CHECK_NOTHROW(validate_host_label(std::string(63, 'N')));
}

TEST_CASE("incarnation ids are unique") {
  std::set<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.insert(new_incarnation_id());
  CHECK(ids.size() == 1000);
}

TEST_CASE("roster encoding round-trips") {
  std::vector<MemberDescriptor> roster = {{"h0", "127.0.0.1:1", "p1"}, {"h1", "127.0.0.1:2", "p2"}};
  CHECK(detail::decode_roster(detail::encode_roster(roster)) == roster);
  CHECK_THROWS_AS(detail::decode_roster("not json"), ProtocolError);
}

TEST_CASE("singleton group") {
  auto node = Node::create("solo");
  Group g(node, 0, {node->self()}, 0);
  CHECK(g.rank() == 0);
  CHECK(g.size() == 1);
  CHECK(g.epoch() == 0);
}

TEST_CASE("group constructor validates rank and membership") {
  auto node = Node::create("solo");
  auto other = Node::create("solo");
  CHECK_THROWS_AS(Group(node, 0, {node->self()}, 1), ArgumentError);
  CHECK_THROWS_AS(Group(node, 0, {other->self()}, 0), ArgumentError);
  CHECK_THROWS_AS(Group(node, 0, {}, 0), ArgumentError);
}

TEST_CASE("rank is the roster index and every member computes the same digest") {
  auto groups = egtest::form_local_group(4);
  for (int i = 0; i < 4; ++i) {
    const auto& g = groups[static_cast<std::size_t>(i)];
    CHECK(g.rank() == i);
    CHECK(g.size() == 4);
    CHECK(g.roster()[static_cast<std::size_t>(i)].incarnation_id == g.node().self().incarnation_id);
    CHECK(g.digest() == groups[0].digest());
  }
  CHECK(groups[2].rank() == 2);
}

TEST_CASE("retire is idempotent and later calls fail") {
  auto node = Node::create("solo");
  Group g(node, 0, {node->self()}, 0);
  Group copy = g;
  g.retire();
  g.retire();
  CHECK(copy.retired());
  CHECK_THROWS_AS(g.rank(), RetiredGroupError);
  CHECK_THROWS_AS(copy.size(), RetiredGroupError);
  CHECK_THROWS_AS(barrier(g), RetiredGroupError);
}

TEST_CASE("point-to-point messaging inside a group reserves low tags") {
  auto groups = egtest::form_local_group(2);
  groups[0].send(1, 64, to_bytes("hi"));
  CHECK(to_string(groups[1].recv(0, 64)) == "hi");
  CHECK_THROWS_AS(groups[0].send(1, 10, {}), ArgumentError);
  CHECK_THROWS_AS(groups[0].send(2, 64, {}), ArgumentError);
}

TEST_CASE("inter-group sides must be disjoint and release is single use") {
  auto a = Node::create("h");
  auto b = Node::create("h");
  Group ga(a, 0, {a->self()}, 0);
  CHECK_THROWS_AS(InterGroup(ga, {a->self()}, Side::parent_side, 0, 0), ArgumentError);
  InterGroup inter(ga, {b->self()}, Side::parent_side, 0, 0);
  InterGroup copy = inter;
  CHECK_FALSE(inter.released());
  inter.release();
  CHECK(copy.released());
}
