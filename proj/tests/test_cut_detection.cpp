#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "rapid/cut_detection.hpp"
#include "rapid/topology.hpp"

#include "helpers.hpp"

using namespace rapid;
using rapid::testutil::make_config;
using rapid::testutil::make_members;

namespace {

struct Fixture {
    std::shared_ptr<const Configuration> cfg;
    std::shared_ptr<const KRingTopology> topo;

    Fixture(int n, ProtocolParams params, uint64_t seed = 42) {
        cfg = std::make_shared<Configuration>(make_config(n, params, seed));
        topo = std::make_shared<KRingTopology>(KRingTopology::build(*cfg));
    }

    CutDetector detector(TraceSink* trace = nullptr) const {
        return CutDetector(cfg, topo, trace);
    }

    Alert remove_alert(const NodeId& observer, const NodeId& subject) const {
        Alert a;
        a.observer = observer;
        a.subject = subject;
        a.kind = AlertKind::kRemove;
        a.config_id = cfg->id;
        return a;
    }

    // feed `count` distinct-observer alerts for `subject`
    void feed(CutDetector& det, const NodeId& subject, int count, Tick now = 0) const {
        auto obs = topo->distinct_observers_of(subject);
        REQUIRE(static_cast<int>(obs.size()) >= count);
        for (int i = 0; i < count; ++i)
            det.ingest_quiet(remove_alert(obs[i], subject), now);
    }

    SubjectKey rkey(const NodeId& subject) const {
        return SubjectKey{AlertKind::kRemove, subject, Endpoint{}};
    }
};

ProtocolParams params_klh(int k, int h, int l) {
    ProtocolParams p;
    p.k = k;
    p.h = h;
    p.l = l;
    return p;
}

}  // namespace

TEST_CASE("constructor guards") {
    Fixture fx(10, params_klh(4, 3, 2));
    CHECK_THROWS_AS(CutDetector(nullptr, fx.topo), InvariantError);
    CHECK_THROWS_AS(CutDetector(fx.cfg, nullptr), InvariantError);

    auto other = std::make_shared<KRingTopology>(ConfigurationId{999}, member_ids(*fx.cfg), 4);
    CHECK_THROWS_AS(CutDetector(fx.cfg, other), InvariantError);

    Fixture wide(10, params_klh(65, 64, 3));
    CHECK_THROWS_AS(wide.detector(), InvariantError);
}

TEST_CASE("one unstable subject holds back three stable ones") {
    // K=10, H=7, L=2; tallies q:5 r:8 s:9 t:7 block on q, then q reaches 7
    Fixture fx(50, params_klh(10, 7, 2));
    auto det = fx.detector();

    std::vector<NodeId> picked;
    for (const auto& m : fx.cfg->members) {
        if (fx.topo->distinct_observers_of(m.id).size() >= 9) picked.push_back(m.id);
        if (picked.size() == 4) break;
    }
    REQUIRE(picked.size() == 4);
    const NodeId q = picked[0], r = picked[1], s = picked[2], t = picked[3];

    fx.feed(det, q, 5);
    fx.feed(det, r, 8);
    fx.feed(det, s, 9);
    fx.feed(det, t, 7);

    CHECK(det.mode_of(fx.rkey(q)) == ReportMode::kUnstable);
    CHECK(det.mode_of(fx.rkey(r)) == ReportMode::kStable);
    CHECK(det.mode_of(fx.rkey(s)) == ReportMode::kStable);
    CHECK(det.mode_of(fx.rkey(t)) == ReportMode::kStable);
    CHECK(det.unstable_count() == 1);
    CHECK(det.stable_count() == 3);
    CHECK_FALSE(det.evaluate(0).has_value());

    // q's 6th and 7th distinct observers flip it to stable
    auto obs = fx.topo->distinct_observers_of(q);
    det.ingest_quiet(fx.remove_alert(obs[5], q), 1);
    CHECK_FALSE(det.evaluate(1).has_value());
    auto cut = det.ingest(fx.remove_alert(obs[6], q), 1);

    REQUIRE(cut.has_value());
    std::vector<NodeId> expect{q, r, s, t};
    std::sort(expect.begin(), expect.end());
    CHECK(cut->removals == expect);
    CHECK(cut->joins.empty());
    CHECK(cut->config_id == fx.cfg->id);

    // at most one proposal per configuration
    CHECK(det.has_proposed());
    CHECK_FALSE(det.evaluate(2).has_value());
    CHECK(det.quiescent_evaluation().has_value());  // latch-free view still sees it
}

TEST_CASE("single failure proposes on the H-th distinct alert") {
    Fixture fx(50, params_klh(10, 9, 3));
    auto det = fx.detector();

    NodeId subject;
    for (const auto& m : fx.cfg->members) {
        if (fx.topo->distinct_observers_of(m.id).size() >= 9) {
            subject = m.id;
            break;
        }
    }
    REQUIRE_FALSE(subject.is_nil());

    auto obs = fx.topo->distinct_observers_of(subject);
    for (int i = 0; i < 8; ++i) {
        auto cut = det.ingest(fx.remove_alert(obs[i], subject), i);
        CHECK_FALSE(cut.has_value());
    }
    CHECK(det.mode_of(fx.rkey(subject)) == ReportMode::kUnstable);
    auto cut = det.ingest(fx.remove_alert(obs[8], subject), 9);
    REQUIRE(cut.has_value());
    CHECK(cut->removals == std::vector<NodeId>{subject});
}

TEST_CASE("ingest outcomes and counters") {
    Fixture fx(50, params_klh(10, 9, 3));
    auto det = fx.detector();

    auto subject = fx.cfg->members[7].id;
    auto obs = fx.topo->distinct_observers_of(subject);

    CHECK(det.ingest_quiet(fx.remove_alert(obs[0], subject), 0) == IngestOutcome::kApplied);
    CHECK(det.ingest_quiet(fx.remove_alert(obs[0], subject), 0) == IngestOutcome::kDuplicate);
    CHECK(det.tally(fx.rkey(subject)) == 1);

    auto stale = fx.remove_alert(obs[1], subject);
    stale.config_id = ConfigurationId{fx.cfg->id.value ^ 1};
    CHECK(det.ingest_quiet(stale, 0) == IngestOutcome::kStaleConfig);

    // a member that is not a designated observer of the subject
    NodeId outsider;
    for (const auto& m : fx.cfg->members) {
        if (m.id == subject) continue;
        if (std::find(obs.begin(), obs.end(), m.id) == obs.end()) {
            outsider = m.id;
            break;
        }
    }
    REQUIRE_FALSE(outsider.is_nil());
    CHECK(det.ingest_quiet(fx.remove_alert(outsider, subject), 0) ==
          IngestOutcome::kInvalidObserver);

    // REMOVE of a non-member
    CHECK(det.ingest_quiet(fx.remove_alert(obs[0], NodeId{5, 5}), 0) ==
          IngestOutcome::kInvalidSubject);

    const auto& c = det.counters();
    CHECK(c.applied == 1);
    CHECK(c.duplicates == 1);
    CHECK(c.stale_config == 1);
    CHECK(c.invalid_observer == 1);
    CHECK(c.invalid_subject == 1);
}

TEST_CASE("join tallies are keyed by joiner identity") {
    Fixture fx(20, params_klh(4, 3, 2));
    auto det = fx.detector();

    Member joiner;
    joiner.id = NodeId{0x77, 0x88};
    joiner.endpoint = Endpoint{"127.0.0.1", 19001};

    auto temp = temporary_observers(*fx.cfg, joiner.id);
    std::sort(temp.begin(), temp.end());
    temp.erase(std::unique(temp.begin(), temp.end()), temp.end());
    REQUIRE(temp.size() >= 3);

    auto join_alert = [&](const NodeId& o, const Member& j) {
        Alert a;
        a.observer = o;
        a.subject = j.id;
        a.kind = AlertKind::kJoin;
        a.config_id = fx.cfg->id;
        a.joiner = j;
        return a;
    };

    // JOIN of an existing member is rejected
    CHECK(det.ingest_quiet(join_alert(temp[0], fx.cfg->members[0]), 0) ==
          IngestOutcome::kInvalidSubject);
    // JOIN without a joiner payload is rejected
    Alert naked = join_alert(temp[0], joiner);
    naked.joiner.reset();
    CHECK(det.ingest_quiet(naked, 0) == IngestOutcome::kInvalidSubject);

    // same id from a different endpoint tallies separately
    Member rejoin = joiner;
    rejoin.endpoint = Endpoint{"127.0.0.1", 19002};

    CHECK(det.ingest_quiet(join_alert(temp[0], joiner), 0) == IngestOutcome::kApplied);
    CHECK(det.ingest_quiet(join_alert(temp[0], rejoin), 0) == IngestOutcome::kApplied);
    CHECK(det.tally(SubjectKey{AlertKind::kJoin, joiner.id, joiner.endpoint}) == 1);
    CHECK(det.tally(SubjectKey{AlertKind::kJoin, rejoin.id, rejoin.endpoint}) == 1);

    det.ingest_quiet(join_alert(temp[1], joiner), 0);
    CHECK(det.stable_join_count() == 0);  // tally 2 = L: unstable, not stable
    det.ingest_quiet(join_alert(temp[2], joiner), 0);
    CHECK(det.stable_join_count() == 1);  // tally 3 = h_eff
    auto cut = det.evaluate(0);
    if (!cut) {
        // rejoin identity still unstable; its observers finish it
        det.ingest_quiet(join_alert(temp[1], rejoin), 0);
        det.ingest_quiet(join_alert(temp[2], rejoin), 0);
        cut = det.evaluate(0);
    }
    REQUIRE(cut.has_value());
    CHECK(cut->removals.empty());
    REQUIRE_FALSE(cut->joins.empty());
    CHECK(cut->joins.front().id == joiner.id);
    CHECK(det.stable_join_count() >= 1);
}

TEST_CASE("implicit alerts complete blocked subjects") {
    // subject s is unstable; one of its silent observers o is itself
    // suspected (tally >= L), so o's alert about s is implied
    Fixture fx(12, params_klh(4, 3, 2));
    auto det = fx.detector();

    NodeId s;
    NodeId o;
    for (const auto& m : fx.cfg->members) {
        auto obs = fx.topo->distinct_observers_of(m.id);
        if (obs.size() < 4) continue;
        for (const auto& cand : obs) {
            if (fx.topo->distinct_observers_of(cand).size() >= 2) {
                s = m.id;
                o = cand;
                break;
            }
        }
        if (!s.is_nil()) break;
    }
    REQUIRE_FALSE(s.is_nil());

    // two alerts for s from observers other than o
    auto obs = fx.topo->distinct_observers_of(s);
    int fed = 0;
    for (const auto& ob : obs) {
        if (ob == o || fed == 2) continue;
        det.ingest_quiet(fx.remove_alert(ob, s), 0);
        ++fed;
    }
    REQUIRE(fed == 2);
    CHECK(det.mode_of(fx.rkey(s)) == ReportMode::kUnstable);

    // nothing implied while o looks healthy
    CHECK(det.apply_implicit_alerts(1).empty());

    // two alerts about o make o unstable -> o's silence about s is implied
    fx.feed(det, o, 2, 1);
    CHECK(det.mode_of(fx.rkey(o)) == ReportMode::kUnstable);

    auto implied = det.apply_implicit_alerts(2);
    REQUIRE_FALSE(implied.empty());
    bool found = false;
    for (const auto& a : implied)
        if (a.observer == o && a.subject == s) found = true;
    CHECK(found);
    CHECK(det.mode_of(fx.rkey(s)) == ReportMode::kStable);

    // fixpoint reached: a second pass is a no-op
    CHECK(det.apply_implicit_alerts(3).empty());
}

TEST_CASE("reinforcement echoes after the timeout") {
    auto params = params_klh(4, 3, 2);
    params.reinforcement_timeout = 10;
    Fixture fx(12, params);
    auto det = fx.detector();

    NodeId s;
    for (const auto& m : fx.cfg->members) {
        if (fx.topo->distinct_observers_of(m.id).size() >= 4) {
            s = m.id;
            break;
        }
    }
    REQUIRE_FALSE(s.is_nil());
    auto obs = fx.topo->distinct_observers_of(s);

    det.ingest_quiet(fx.remove_alert(obs[0], s), 5);
    det.ingest_quiet(fx.remove_alert(obs[1], s), 5);  // unstable since tick 5

    // before the timeout, and for a non-observer, nothing happens
    CHECK(det.reinforce(obs[2], 14).empty());
    NodeId outsider;
    for (const auto& m : fx.cfg->members)
        if (m.id != s && std::find(obs.begin(), obs.end(), m.id) == obs.end()) {
            outsider = m.id;
            break;
        }
    REQUIRE_FALSE(outsider.is_nil());
    CHECK(det.reinforce(outsider, 40).empty());
    // an observer that already alerted stays quiet
    CHECK(det.reinforce(obs[0], 40).empty());

    auto echoes = det.reinforce(obs[2], 15);
    REQUIRE(echoes.size() == 1);
    CHECK(echoes[0].observer == obs[2]);
    CHECK(echoes[0].subject == s);
    CHECK(det.tally(fx.rkey(s)) == 3);
    // already applied locally: reinforcing again is a no-op
    CHECK(det.reinforce(obs[2], 16).empty());
}

TEST_CASE("H == L leaves no unstable band") {
    Fixture fx(20, params_klh(4, 4, 4));
    auto det = fx.detector();

    NodeId s;
    for (const auto& m : fx.cfg->members)
        if (fx.topo->distinct_observers_of(m.id).size() == 4) {
            s = m.id;
            break;
        }
    REQUIRE_FALSE(s.is_nil());

    fx.feed(det, s, 3);
    CHECK(det.mode_of(fx.rkey(s)) == ReportMode::kNoise);
    CHECK(det.unstable_count() == 0);
    fx.feed(det, s, 4);
    CHECK(det.mode_of(fx.rkey(s)) == ReportMode::kStable);
    CHECK(det.evaluate(0).has_value());
}

TEST_CASE("quiescent evaluation is permutation invariant (exhaustive)") {
    // 2 subjects x 4 observers = 8 alerts; every one of the 8! orders must
    // land on the same final evaluation
    Fixture fx(12, params_klh(4, 3, 2));

    std::vector<NodeId> subjects;
    for (const auto& m : fx.cfg->members) {
        if (fx.topo->distinct_observers_of(m.id).size() == 4) subjects.push_back(m.id);
        if (subjects.size() == 2) break;
    }
    REQUIRE(subjects.size() == 2);

    std::vector<Alert> alerts;
    for (const auto& s : subjects)
        for (const auto& o : fx.topo->distinct_observers_of(s))
            alerts.push_back(fx.remove_alert(o, s));
    REQUIRE(alerts.size() == 8);

    auto reference_det = fx.detector();
    for (const auto& a : alerts) reference_det.ingest_quiet(a, 0);
    auto reference = reference_det.quiescent_evaluation();
    REQUIRE(reference.has_value());
    std::vector<NodeId> expect = subjects;
    std::sort(expect.begin(), expect.end());
    CHECK(reference->removals == expect);

    std::vector<int> order{0, 1, 2, 3, 4, 5, 6, 7};
    int checked = 0;
    do {
        auto det = fx.detector();
        for (int i : order) det.ingest_quiet(alerts[i], 0);
        auto got = det.quiescent_evaluation();
        REQUIRE(got.has_value());
        if (!(*got == *reference)) {
            CAPTURE(checked);
            REQUIRE(*got == *reference);
        }
        ++checked;
    } while (std::next_permutation(order.begin(), order.end()));
    CHECK(checked == 40320);
}

TEST_CASE("quiescent evaluation is permutation invariant (random orders)") {
    Fixture fx(50, params_klh(10, 9, 3));

    std::vector<NodeId> subjects;
    for (const auto& m : fx.cfg->members) {
        if (fx.topo->distinct_observers_of(m.id).size() == 10) subjects.push_back(m.id);
        if (subjects.size() == 3) break;
    }
    REQUIRE(subjects.size() == 3);

    std::vector<Alert> alerts;
    for (const auto& s : subjects)
        for (const auto& o : fx.topo->distinct_observers_of(s))
            alerts.push_back(fx.remove_alert(o, s));
    REQUIRE(alerts.size() == 30);

    auto ref_det = fx.detector();
    for (const auto& a : alerts) ref_det.ingest_quiet(a, 0);
    auto reference = ref_det.quiescent_evaluation();
    REQUIRE(reference.has_value());

    SplitMix64 rng(2024);
    for (int trial = 0; trial < 2000; ++trial) {
        auto order = alerts;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        auto det = fx.detector();
        for (const auto& a : order) det.ingest_quiet(a, 0);
        auto got = det.quiescent_evaluation();
        REQUIRE(got.has_value());
        if (!(*got == *reference)) {
            CAPTURE(trial);
            REQUIRE(*got == *reference);
        }
    }
}

// Independent reference: a literal transcription of the tally automaton over
// observer sets, replayed against the detector on a randomized alert stream.
namespace {

struct OracleState {
    std::map<NodeId, std::set<NodeId>> alerted;  // subject -> observers heard
    const Configuration* cfg;
    const KRingTopology* topo;
    bool proposed = false;

    ReportMode mode(const NodeId& s) const {
        auto it = alerted.find(s);
        int tally = it == alerted.end() ? 0 : static_cast<int>(it->second.size());
        int observers = static_cast<int>(topo->distinct_observers_of(s).size());
        int h_eff = std::min(cfg->params.h, observers);
        int l_eff = std::min(cfg->params.l, h_eff);
        if (tally >= h_eff) return ReportMode::kStable;
        if (tally >= l_eff) return ReportMode::kUnstable;
        return ReportMode::kNoise;
    }

    std::optional<CutProposal> evaluate() {
        if (proposed) return std::nullopt;
        std::vector<NodeId> stable;
        for (const auto& [s, obs] : alerted) {
            switch (mode(s)) {
                case ReportMode::kUnstable: return std::nullopt;
                case ReportMode::kStable: stable.push_back(s); break;
                case ReportMode::kNoise: break;
            }
        }
        if (stable.empty()) return std::nullopt;
        CutProposal cut;
        cut.config_id = cfg->id;
        cut.removals = std::move(stable);
        cut.canonicalize();
        proposed = true;
        return cut;
    }
};

}  // namespace

TEST_CASE("detector matches the reference automaton on random streams") {
    Fixture fx(30, params_klh(10, 8, 3), 77);
    OracleState oracle{{}, fx.cfg.get(), fx.topo.get()};
    auto det = fx.detector();

    SplitMix64 rng(555);
    const auto& members = fx.cfg->members;

    for (int step = 0; step < 3000; ++step) {
        const NodeId subject = members[rng.next_below(members.size())].id;
        auto obs = fx.topo->distinct_observers_of(subject);
        NodeId observer = obs[rng.next_below(obs.size())];
        Alert a = fx.remove_alert(observer, subject);

        uint64_t flavor = rng.next_below(100);
        bool effective = true;
        if (flavor < 3) {
            a.config_id = ConfigurationId{fx.cfg->id.value + 1};  // stale
            effective = false;
        } else if (flavor < 6) {
            a.observer = subject == members[0].id ? members[1].id : members[0].id;
            if (std::find(obs.begin(), obs.end(), a.observer) != obs.end()) continue;
            effective = false;  // invalid observer
        }

        auto got = det.ingest(a, step);
        std::optional<CutProposal> want;
        if (effective) {
            oracle.alerted[subject].insert(observer);
            want = oracle.evaluate();
        }

        CHECK(got.has_value() == want.has_value());
        if (got && want) CHECK(*got == *want);
        if (det.has_proposed()) break;
    }

    // drive the rest of the stream to quiescence and compare tallies
    for (const auto& m : members) {
        auto it = oracle.alerted.find(m.id);
        int want_tally = it == oracle.alerted.end() ? 0 : static_cast<int>(it->second.size());
        CHECK(det.tally(fx.rkey(m.id)) == want_tally);
        CHECK(det.mode_of_member(m.id) == oracle.mode(m.id));
    }
}
