#include <doctest.h>

#include <algorithm>
#include <set>

#include "rapid/core.hpp"
#include "rapid/rng.hpp"

#include "helpers.hpp"

using namespace rapid;
using rapid::testutil::make_config;
using rapid::testutil::make_members;

TEST_CASE("mix64 matches the published splitmix64 sequence") {
    // first three outputs of splitmix64 seeded with 0
    SplitMix64 rng(0);
    CHECK(rng.next() == 0xe220a8397b1dcdafull);
    CHECK(rng.next() == 0x6e789e6aa1b965f4ull);
    CHECK(rng.next() == 0x06c45d188009454full);
    // the one-argument finalizer is the same stepping function
    CHECK(mix64(0) == 0xe220a8397b1dcdafull);
}

TEST_CASE("fnv1a64 matches the reference test vectors") {
    CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a64_str("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64_str("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("splitmix64 helpers stay in range") {
    SplitMix64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng.next_below(13) < 13);
        double u = rng.next_unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("NodeId str/parse roundtrip and ordering") {
    NodeId a{0x0123456789abcdefull, 0xfedcba9876543210ull};
    CHECK(a.str() == "0123456789abcdeffedcba9876543210");
    auto back = NodeId::parse(a.str());
    REQUIRE(back.has_value());
    CHECK(*back == a);

    CHECK_FALSE(NodeId::parse("xyz").has_value());
    CHECK_FALSE(NodeId::parse("0123").has_value());
    CHECK_FALSE(NodeId::parse(std::string(32, 'g')).has_value());

    NodeId b{0x0123456789abcdefull, 0xfedcba9876543211ull};
    CHECK(a < b);
    CHECK(NodeId{}.is_nil());
    CHECK_FALSE(a.is_nil());

    std::set<NodeId> seen;
    for (int i = 0; i < 200; ++i) {
        SplitMix64 rng(i);
        seen.insert(NodeId::from_rng(rng));
    }
    CHECK(seen.size() == 200);
}

TEST_CASE("ConfigurationId str/parse roundtrip") {
    ConfigurationId c{0xdeadbeef12345678ull};
    CHECK(c.str() == "deadbeef12345678");
    auto back = ConfigurationId::parse(c.str());
    REQUIRE(back.has_value());
    CHECK(*back == c);
    CHECK_FALSE(ConfigurationId::parse("123").has_value());
}

TEST_CASE("Endpoint validation") {
    CHECK_THROWS_AS(Endpoint("", 80), InvariantError);
    CHECK_THROWS_AS(Endpoint("127.0.0.1", 0), InvariantError);
    Endpoint e("127.0.0.1", 8080);
    CHECK(e.str() == "127.0.0.1:8080");
}

TEST_CASE("ProtocolParams validation enforces 1 <= L <= H <= K") {
    ProtocolParams p;
    CHECK_NOTHROW(p.validate());

    auto broken = [](auto patch) {
        ProtocolParams q;
        patch(q);
        return q;
    };
    CHECK_THROWS_AS(broken([](auto& q) { q.l = 0; }).validate(), InvariantError);
    CHECK_THROWS_AS(broken([](auto& q) { q.l = q.h + 1; }).validate(), InvariantError);
    CHECK_THROWS_AS(broken([](auto& q) { q.h = q.k + 1; }).validate(), InvariantError);
    CHECK_THROWS_AS(broken([](auto& q) { q.reinforcement_timeout = 0; }).validate(),
                    InvariantError);
    CHECK_THROWS_AS(broken([](auto& q) { q.probe_failure_fraction = {0, 5}; }).validate(),
                    InvariantError);
    CHECK_THROWS_AS(broken([](auto& q) { q.probe_failure_fraction = {6, 5}; }).validate(),
                    InvariantError);
}

TEST_CASE("configuration membership lookups") {
    auto cfg = make_config(10);
    for (size_t i = 0; i < cfg.members.size(); ++i) {
        const auto& m = cfg.members[i];
        CHECK(cfg.contains(m.id));
        REQUIRE(cfg.find(m.id) != nullptr);
        CHECK(cfg.find(m.id)->endpoint == m.endpoint);
        CHECK(cfg.index_of(m.id) == i);
    }
    NodeId stranger{1, 2};
    CHECK_FALSE(cfg.contains(stranger));
    CHECK(cfg.find(stranger) == nullptr);
    CHECK_FALSE(cfg.index_of(stranger).has_value());
}

TEST_CASE("configuration invariants reject malformed member lists") {
    auto cfg = make_config(4);

    auto dup = cfg;
    dup.members.push_back(dup.members.front());
    CHECK_THROWS_AS(dup.check_invariants(), InvariantError);

    auto unsorted = cfg;
    std::swap(unsorted.members[0], unsorted.members[1]);
    CHECK_THROWS_AS(unsorted.check_invariants(), InvariantError);

    auto dup_ep = cfg;
    dup_ep.members[1].endpoint = dup_ep.members[0].endpoint;
    CHECK_THROWS_AS(dup_ep.check_invariants(), InvariantError);

    Configuration empty;
    CHECK_THROWS_AS(empty.check_invariants(), InvariantError);
}

TEST_CASE("derive_config_id is a pure chain hash") {
    auto ids = member_ids(make_config(8));
    auto a = derive_config_id(ConfigurationId{}, ids);
    auto b = derive_config_id(ConfigurationId{}, ids);
    CHECK(a == b);

    // sensitive to the previous id and to every member
    CHECK(derive_config_id(a, ids) != a);
    auto mutated = ids;
    mutated[3].lo ^= 1;
    CHECK(derive_config_id(ConfigurationId{}, mutated) != a);

    // sensitive to order (callers pass sorted lists)
    auto swapped = ids;
    std::swap(swapped[0], swapped[1]);
    CHECK(derive_config_id(ConfigurationId{}, swapped) != a);

    CHECK_THROWS_AS(derive_config_id(ConfigurationId{}, {}), InvariantError);
}

TEST_CASE("CutProposal canonicalize sorts and dedupes") {
    auto members = make_members(6);
    CutProposal cut;
    cut.config_id = ConfigurationId{1};
    cut.removals = {members[3].id, members[1].id, members[3].id};
    cut.joins = {members[5], members[4], members[5]};
    cut.canonicalize();
    CHECK(cut.removals == std::vector<NodeId>{members[1].id, members[3].id});
    REQUIRE(cut.joins.size() == 2);
    CHECK(cut.joins[0].id == members[4].id);
    CHECK(cut.joins[1].id == members[5].id);
}

TEST_CASE("CutProposal digest separates removals from joins") {
    auto members = make_members(4);
    CutProposal removal;
    removal.config_id = ConfigurationId{9};
    removal.removals = {members[0].id};
    removal.canonicalize();

    CutProposal join;
    join.config_id = ConfigurationId{9};
    join.joins = {members[0]};
    join.canonicalize();

    CHECK(removal.digest() != join.digest());
    CHECK(removal.digest() == removal.digest());

    auto other_cfg = removal;
    other_cfg.config_id = ConfigurationId{10};
    CHECK(other_cfg.digest() != removal.digest());

    // equal canonical cuts hash identically regardless of construction order
    CutProposal two_a, two_b;
    two_a.config_id = two_b.config_id = ConfigurationId{9};
    two_a.removals = {members[0].id, members[1].id};
    two_b.removals = {members[1].id, members[0].id};
    two_a.canonicalize();
    two_b.canonicalize();
    CHECK(two_a == two_b);
    CHECK(two_a.digest() == two_b.digest());
}

TEST_CASE("apply_cut removes, adds and rehashes") {
    auto cfg = make_config(6);
    auto joiners = make_members(2, 777, 9900);

    CutProposal cut;
    cut.config_id = cfg.id;
    cut.removals = {cfg.members[2].id, cfg.members[4].id};
    cut.joins = joiners;
    cut.canonicalize();

    auto next = apply_cut(cfg, cut);
    CHECK(next.size() == 6);
    CHECK_FALSE(next.contains(cfg.members[2].id));
    CHECK_FALSE(next.contains(cfg.members[4].id));
    CHECK(next.contains(joiners[0].id));
    CHECK(next.contains(joiners[1].id));
    CHECK(next.params == cfg.params);
    CHECK(next.id == derive_config_id(cfg.id, member_ids(next)));
    CHECK(next.id != cfg.id);
    CHECK(std::is_sorted(next.members.begin(), next.members.end(),
                         [](const Member& a, const Member& b) { return a.id < b.id; }));
}

TEST_CASE("apply_cut rejects stale and malformed cuts") {
    auto cfg = make_config(5);

    CutProposal stale;
    stale.config_id = ConfigurationId{cfg.id.value ^ 1};
    stale.removals = {cfg.members[0].id};
    CHECK_THROWS_AS(apply_cut(cfg, stale), ProtocolError);

    CutProposal empty;
    empty.config_id = cfg.id;
    CHECK_THROWS_AS(apply_cut(cfg, empty), InvariantError);

    CutProposal ghost;
    ghost.config_id = cfg.id;
    ghost.removals = {NodeId{123, 456}};
    CHECK_THROWS_AS(apply_cut(cfg, ghost), InvariantError);

    CutProposal rejoin;
    rejoin.config_id = cfg.id;
    rejoin.joins = {cfg.members[1]};
    CHECK_THROWS_AS(apply_cut(cfg, rejoin), InvariantError);
}

TEST_CASE("membership history determines the configuration id") {
    // two clusters arriving at the same member set through different
    // histories end up with different ids
    auto cfg = make_config(5);

    CutProposal drop2;
    drop2.config_id = cfg.id;
    drop2.removals = {cfg.members[0].id, cfg.members[1].id};
    drop2.canonicalize();
    auto direct = apply_cut(cfg, drop2);

    CutProposal drop_first;
    drop_first.config_id = cfg.id;
    drop_first.removals = {cfg.members[0].id};
    auto mid = apply_cut(cfg, drop_first);
    CutProposal drop_second;
    drop_second.config_id = mid.id;
    drop_second.removals = {cfg.members[1].id};
    auto stepwise = apply_cut(mid, drop_second);

    CHECK(member_ids(direct) == member_ids(stepwise));
    CHECK(direct.id != stepwise.id);
}
