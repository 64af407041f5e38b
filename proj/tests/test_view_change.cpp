#include <doctest.h>

#include <algorithm>
#include <vector>

#include "rapid/view_change.hpp"

#include "helpers.hpp"

using namespace rapid;

namespace {

const ConfigurationId kCid{0xc0ffee};

CutProposal mk_cut(uint64_t tag) {
    CutProposal cut;
    cut.config_id = kCid;
    cut.removals = {NodeId{tag, tag}};
    cut.canonicalize();
    return cut;
}

PromiseInfo fast_promise(const CutProposal& vote) {
    PromiseInfo p;
    p.fast_vote = vote;
    return p;
}

PromiseInfo classic_promise(Ballot b, const CutProposal& accepted) {
    PromiseInfo p;
    p.accepted_ballot = b;
    p.accepted = accepted;
    return p;
}

}  // namespace

TEST_CASE("quorum sizes") {
    CHECK(fast_quorum(1) == 1);
    CHECK(fast_quorum(2) == 2);
    CHECK(fast_quorum(3) == 3);
    CHECK(fast_quorum(4) == 4);
    CHECK(fast_quorum(5) == 4);
    CHECK(fast_quorum(6) == 5);
    CHECK(fast_quorum(8) == 7);
    CHECK(fast_quorum(100) == 76);
    CHECK(fast_quorum(1000) == 751);

    CHECK(classic_quorum(1) == 1);
    CHECK(classic_quorum(2) == 2);
    CHECK(classic_quorum(3) == 2);
    CHECK(classic_quorum(4) == 3);
    CHECK(classic_quorum(5) == 3);
    CHECK(classic_quorum(1000) == 501);

    CHECK_THROWS_AS(fast_quorum(0), ProtocolError);
    CHECK_THROWS_AS(classic_quorum(0), ProtocolError);

    // any fast quorum and any classic quorum intersect in enough voters to
    // make the recovery threshold positive
    for (int n = 1; n <= 200; ++n) {
        CHECK(2 * fast_quorum(n) > 3 * n / 2);
        CHECK(classic_quorum(n) + fast_quorum(n) - n >= 1);
    }
}

TEST_CASE("ballot ordering") {
    CHECK(Ballot{} < Ballot{0, 0});
    CHECK(Ballot{0, 5} < Ballot{1, 0});
    CHECK(Ballot{3, 1} < Ballot{3, 2});
    CHECK_FALSE(Ballot{}.valid());
    CHECK(Ballot{0, 0}.valid());
}

TEST_CASE("bitmap helpers across word boundaries") {
    Bitmap b(3, 0);  // 192 bits
    set_bit(b, 0);
    set_bit(b, 63);
    set_bit(b, 64);
    set_bit(b, 130);
    CHECK(get_bit(b, 0));
    CHECK(get_bit(b, 63));
    CHECK(get_bit(b, 64));
    CHECK(get_bit(b, 130));
    CHECK_FALSE(get_bit(b, 1));
    CHECK_FALSE(get_bit(b, 129));
    CHECK(popcount(b) == 4);
    set_bit(b, 64);  // idempotent
    CHECK(popcount(b) == 4);
}

TEST_CASE("vote state guards") {
    CHECK_THROWS_AS(VoteState(kCid, 0), ProtocolError);

    VoteState vs(kCid, 8);
    auto cut = mk_cut(1);
    vs.vote(cut, 2, 0);
    CHECK(vs.has_voted());
    CHECK(vs.my_vote() == cut.digest());
    CHECK(vs.count(cut.digest()) == 1);
    CHECK(get_bit(*vs.bitmap(cut.digest()), 2));
    CHECK_THROWS_AS(vs.vote(cut, 2, 0), ProtocolError);

    VoteState vs2(kCid, 8);
    auto foreign = mk_cut(2);
    foreign.config_id = ConfigurationId{1};
    CHECK_THROWS_AS(vs2.vote(foreign, 0, 0), ProtocolError);
    CHECK_THROWS_AS(vs2.vote(cut, 8, 0), ProtocolError);   // index out of range
    CHECK_THROWS_AS(vs2.vote(cut, -1, 0), ProtocolError);

    CHECK_THROWS_AS(vs2.merge(cut.digest(), cut, Bitmap(3, 0), 0), ProtocolError);  // size
    CHECK_THROWS_AS(vs2.merge(cut.digest() ^ 1, cut, Bitmap(1, 0), 0), ProtocolError);
    CHECK_THROWS_AS(vs2.merge(foreign.digest(), foreign, Bitmap(1, 0), 0), ProtocolError);
}

TEST_CASE("fast decision at exactly the fast quorum") {
    const int n = 8;  // fq = 7
    VoteState vs(kCid, n);
    auto cut = mk_cut(3);

    Bitmap six(1, 0);
    for (int i = 0; i < 6; ++i) set_bit(six, i);
    CHECK_FALSE(vs.merge(cut.digest(), cut, six, 0));
    CHECK_FALSE(vs.decided().has_value());
    CHECK(vs.count(cut.digest()) == 6);

    Bitmap seventh(1, 0);
    set_bit(seventh, 6);
    CHECK(vs.merge(cut.digest(), cut, seventh, 1));
    REQUIRE(vs.decided().has_value());
    CHECK(*vs.decided() == cut);

    // later merges never report a fresh decision
    Bitmap eighth(1, 0);
    set_bit(eighth, 7);
    CHECK_FALSE(vs.merge(cut.digest(), cut, eighth, 2));
}

TEST_CASE("vote merging is commutative, associative and idempotent") {
    const int n = 130;  // three words
    auto a = mk_cut(10);
    auto b = mk_cut(11);

    SplitMix64 rng(99);
    std::vector<std::pair<const CutProposal*, Bitmap>> updates;
    for (int i = 0; i < 40; ++i) {
        Bitmap bm(3, 0);
        for (int j = 0; j < 3; ++j) set_bit(bm, static_cast<int>(rng.next_below(n)));
        updates.emplace_back(rng.next_below(2) ? &a : &b, std::move(bm));
    }

    auto apply_all = [&](const std::vector<int>& order, int repeats) {
        VoteState vs(kCid, n);
        for (int rep = 0; rep < repeats; ++rep)
            for (int i : order) {
                const auto& [cut, bm] = updates[i];
                vs.merge(cut->digest(), *cut, bm, 0);
            }
        return std::pair{vs.count(a.digest()), vs.count(b.digest())};
    };

    std::vector<int> order(updates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto reference = apply_all(order, 1);

    for (int trial = 0; trial < 50; ++trial) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        CHECK(apply_all(order, 1) == reference);
        CHECK(apply_all(order, 2) == reference);  // idempotent under replay
    }
}

TEST_CASE("force_decide accepts repeats and rejects contradictions") {
    VoteState vs(kCid, 4);
    auto a = mk_cut(20);
    auto b = mk_cut(21);
    vs.force_decide(a);
    CHECK_NOTHROW(vs.force_decide(a));
    CHECK_THROWS_AS(vs.force_decide(b), InvariantError);
}

TEST_CASE("deadline arms once") {
    VoteState vs(kCid, 4);
    CHECK(vs.fast_deadline() == -1);
    vs.arm_deadline(10, 20);
    CHECK(vs.fast_deadline() == 30);
    vs.arm_deadline(50, 20);
    CHECK(vs.fast_deadline() == 30);
}

TEST_CASE("recovery: classic accept precedence") {
    auto a = mk_cut(30);
    auto b = mk_cut(31);
    auto own = mk_cut(32);

    // n = 4: an acceptor already accepted `b` classically; two fast votes for
    // `a` inside the quorum must not override it
    std::vector<PromiseInfo> promises{classic_promise(Ballot{0, 1}, b), fast_promise(a),
                                      fast_promise(a)};
    auto picked = choose_recovery_value(4, promises, own);
    REQUIRE(picked.has_value());
    CHECK(*picked == b);

    // highest accepted ballot wins among several
    std::vector<PromiseInfo> several{classic_promise(Ballot{0, 1}, b),
                                     classic_promise(Ballot{2, 0}, a),
                                     classic_promise(Ballot{1, 3}, b)};
    picked = choose_recovery_value(4, several, own);
    REQUIRE(picked.has_value());
    CHECK(*picked == a);
}

TEST_CASE("recovery: fast-vote counting at the intersection threshold") {
    auto a = mk_cut(40);
    auto b = mk_cut(41);
    auto own = mk_cut(42);

    // n = 6, |Q| = 4, fq = 5 -> threshold 3
    std::vector<PromiseInfo> three_a{fast_promise(a), fast_promise(a), fast_promise(a),
                                     fast_promise(b)};
    auto picked = choose_recovery_value(6, three_a, own);
    REQUIRE(picked.has_value());
    CHECK(*picked == a);

    // {a:2, b:1} stays under the threshold: coordinator is free, takes own
    std::vector<PromiseInfo> under{fast_promise(a), fast_promise(a), fast_promise(b),
                                   PromiseInfo{}};
    picked = choose_recovery_value(6, under, own);
    REQUIRE(picked.has_value());
    CHECK(*picked == own);

    // free with no own proposal: falls back to the most supported vote
    picked = choose_recovery_value(6, under, std::nullopt);
    REQUIRE(picked.has_value());
    CHECK(*picked == a);

    // nothing at all to go on
    std::vector<PromiseInfo> empty{PromiseInfo{}, PromiseInfo{}, PromiseInfo{}, PromiseInfo{}};
    CHECK_FALSE(choose_recovery_value(6, empty, std::nullopt).has_value());
}

// Exhaustive safety check of the recovery rule. For n <= 5 enumerate every
// fast-vote assignment (each node votes a, votes b, or abstains), every
// admissible promise quorum and every coordinator default. Whenever a value
// could have been fast-decided (it holds >= fq votes overall), recovery from
// any majority must return exactly that value.
TEST_CASE("recovery never overrides a possibly chosen value (exhaustive n <= 5)") {
    auto a = mk_cut(50);
    auto b = mk_cut(51);
    auto own = mk_cut(52);

    long safety_checked = 0;
    for (int n = 2; n <= 5; ++n) {
        const int fq = fast_quorum(n);
        const int cq = classic_quorum(n);
        std::vector<int> votes(n);  // 0 = abstain, 1 = a, 2 = b

        long assignments = 1;
        for (int i = 0; i < n; ++i) assignments *= 3;

        for (long code = 0; code < assignments; ++code) {
            long c = code;
            int count_a = 0, count_b = 0;
            for (int i = 0; i < n; ++i, c /= 3) {
                votes[i] = static_cast<int>(c % 3);
                if (votes[i] == 1) ++count_a;
                if (votes[i] == 2) ++count_b;
            }
            const CutProposal* chosen = nullptr;
            if (count_a >= fq) chosen = &a;
            if (count_b >= fq) chosen = &b;

            for (int mask = 0; mask < (1 << n); ++mask) {
                int sz = 0;
                for (int i = 0; i < n; ++i) sz += (mask >> i) & 1;
                if (sz < cq) continue;

                std::vector<PromiseInfo> promises;
                for (int i = 0; i < n; ++i) {
                    if (!((mask >> i) & 1)) continue;
                    PromiseInfo p;
                    if (votes[i] == 1) p.fast_vote = a;
                    if (votes[i] == 2) p.fast_vote = b;
                    promises.push_back(std::move(p));
                }

                for (int own_case = 0; own_case < 2; ++own_case) {
                    std::optional<CutProposal> coordinator_own;
                    if (own_case) coordinator_own = own;
                    auto picked = choose_recovery_value(n, promises, coordinator_own);
                    if (chosen) {
                        REQUIRE(picked.has_value());
                        if (!(*picked == *chosen)) {
                            CAPTURE(n);
                            CAPTURE(code);
                            CAPTURE(mask);
                            REQUIRE(*picked == *chosen);
                        }
                        ++safety_checked;
                    }
                }
            }
        }
    }
    CHECK(safety_checked > 0);
}

// Negative control for the enumeration above: weakening the intersection
// threshold by one admits ambiguous candidates at n = 5, which is exactly the
// failure the real threshold rules out.
TEST_CASE("a threshold lower by one breaks the recovery rule at n = 5") {
    const int n = 5;
    const int fq = fast_quorum(n);
    const int cq = classic_quorum(n);

    auto ambiguity_count = [&](int threshold_delta) {
        long ambiguous = 0;
        std::vector<int> votes(n);
        for (long code = 0; code < 243; ++code) {
            long c = code;
            int count_a = 0, count_b = 0;
            for (int i = 0; i < n; ++i, c /= 3) {
                votes[i] = static_cast<int>(c % 3);
                if (votes[i] == 1) ++count_a;
                if (votes[i] == 2) ++count_b;
            }
            if (count_a < fq && count_b < fq) continue;  // nothing chosen, vacuous

            for (int mask = 0; mask < (1 << n); ++mask) {
                int sz = 0;
                for (int i = 0; i < n; ++i) sz += (mask >> i) & 1;
                if (sz < cq) continue;
                int in_a = 0, in_b = 0;
                for (int i = 0; i < n; ++i) {
                    if (!((mask >> i) & 1)) continue;
                    if (votes[i] == 1) ++in_a;
                    if (votes[i] == 2) ++in_b;
                }
                int threshold = sz + fq - n + threshold_delta;
                int candidates = (in_a >= threshold) + (in_b >= threshold);
                if (candidates > 1) ++ambiguous;
            }
        }
        return ambiguous;
    };

    CHECK(ambiguity_count(0) == 0);
    CHECK(ambiguity_count(-1) > 0);
}

TEST_CASE("acceptor promise and accept ordering") {
    PaxosState px(kCid, 5);
    auto v = mk_cut(60);

    CHECK(px.on_prepare(Ballot{1, 0}));
    CHECK(px.promised() == Ballot{1, 0});
    CHECK_FALSE(px.on_prepare(Ballot{0, 4}));  // stale
    CHECK(px.on_prepare(Ballot{1, 2}));        // higher index, same round

    CHECK_FALSE(px.on_accept(Ballot{0, 0}, v));  // below promise
    CHECK(px.on_accept(Ballot{1, 2}, v));
    CHECK(px.accepted_ballot() == Ballot{1, 2});
    REQUIRE(px.accepted_value().has_value());
    CHECK(*px.accepted_value() == v);

    // a later prepare must carry the accepted state onward
    CHECK(px.on_prepare(Ballot{2, 0}));
    CHECK(px.accepted_ballot() == Ballot{1, 2});
}

TEST_CASE("coordinator gathers a majority then picks a value") {
    const int n = 5;
    PaxosState px(kCid, n);
    auto own = mk_cut(61);
    auto theirs = mk_cut(62);

    auto ballot = px.start_round(0, 2);
    CHECK(ballot == Ballot{0, 2});
    CHECK(px.phase() == PaxosState::Phase::kPreparing);
    CHECK(px.rounds_started() == 1);

    PromiseInfo empty;
    CHECK_FALSE(px.on_promise(0, ballot, empty, own).has_value());
    // a promise for some other ballot is ignored
    CHECK_FALSE(px.on_promise(1, Ballot{9, 9}, empty, own).has_value());
    CHECK_FALSE(px.on_promise(1, ballot, empty, own).has_value());

    PromiseInfo had_accept;
    had_accept.accepted_ballot = Ballot{0, 0};
    had_accept.accepted = theirs;
    auto value = px.on_promise(3, ballot, had_accept, own);
    REQUIRE(value.has_value());  // third promise completes cq(5) = 3
    CHECK(*value == theirs);     // prior accept wins over own
    CHECK(px.phase() == PaxosState::Phase::kAccepting);

    // duplicate promises after the quorum do not restart selection
    CHECK_FALSE(px.on_promise(4, ballot, empty, own).has_value());
}

TEST_CASE("learner needs a majority of identical learns") {
    const int n = 5;
    PaxosState px(kCid, n);
    auto v = mk_cut(63);
    auto w = mk_cut(64);

    CHECK_FALSE(px.on_learn(0, Ballot{1, 1}, v).has_value());
    CHECK_FALSE(px.on_learn(0, Ballot{1, 1}, v).has_value());  // duplicate acceptor
    CHECK_FALSE(px.on_learn(1, Ballot{2, 0}, v).has_value());  // different ballot
    CHECK_FALSE(px.on_learn(1, Ballot{1, 1}, w).has_value());  // different value
    CHECK_FALSE(px.on_learn(9, Ballot{1, 1}, v).has_value());  // bad index

    CHECK_FALSE(px.on_learn(2, Ballot{1, 1}, v).has_value());
    auto decided = px.on_learn(3, Ballot{1, 1}, v);
    REQUIRE(decided.has_value());
    CHECK(*decided == v);
}
