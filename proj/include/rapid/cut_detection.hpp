#pragma once

#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "rapid/core.hpp"
#include "rapid/topology.hpp"

namespace rapid {

enum class ReportMode { kNoise, kUnstable, kStable };

const char* to_string(ReportMode m);

// Identity a tally is kept against. REMOVE subjects are members; JOIN
// subjects are (id, endpoint) of the joiner so distinct join attempts never
// merge tallies.
struct SubjectKey {
    AlertKind kind = AlertKind::kRemove;
    NodeId id;
    Endpoint endpoint;  // joiner endpoint, empty host for REMOVE keys

    auto operator<=>(const SubjectKey&) const = default;
};

enum class IngestOutcome {
    kApplied,          // new (observer, subject) entry recorded
    kDuplicate,        // M(o, s) already set
    kStaleConfig,      // alert names a different configuration
    kInvalidObserver,  // sender is not a designated/temporary observer
    kInvalidSubject,   // REMOVE of a non-member or JOIN of a member
};

struct CutDetectionCounters {
    uint64_t applied = 0;
    uint64_t duplicates = 0;
    uint64_t stale_config = 0;
    uint64_t invalid_observer = 0;
    uint64_t invalid_subject = 0;
};

// Trace hooks consumed by the simulator's metrics writer.
class TraceSink {
public:
    virtual ~TraceSink() = default;
    virtual void on_alert_ingested(const Alert&, Tick) {}
    virtual void on_mode_change(const SubjectKey&, ReportMode /*from*/, ReportMode /*to*/,
                                Tick) {}
    virtual void on_proposal(const CutProposal&, Tick) {}
};

// Almost-everywhere multi-process cut detector for one configuration.
//
// Tallies distinct observer alerts per subject against the H/L watermarks
// and proposes a configuration change only when at least one subject is in
// stable report mode and none is unstable. Alerts are irrevocable: entries
// only grow, and the whole state is discarded on view change.
//
// Subjects with fewer than K distinct observers (small clusters, duplicate
// ring edges, bootstrap joins) are classified against effective thresholds
// H_eff = min(H, observers), L_eff = min(L, H_eff); otherwise no tally could
// ever reach H there.
class CutDetector {
public:
    CutDetector(std::shared_ptr<const Configuration> cfg,
                std::shared_ptr<const KRingTopology> topology, TraceSink* trace = nullptr);

    ConfigurationId config_id() const { return cfg_->id; }

    // Full per-alert operation: record, then evaluate the aggregation rule.
    std::optional<CutProposal> ingest(const Alert& a, Tick now);

    // Record without evaluating; the engine ingests a whole tick's batches
    // and evaluates once.
    IngestOutcome ingest_quiet(const Alert& a, Tick now);

    // Aggregation rule with the at-most-one-proposal latch.
    std::optional<CutProposal> evaluate(Tick now);

    // Aggregation rule applied to the current tallies, ignoring the latch.
    // Used for order-insensitivity checks at quiescence.
    std::optional<CutProposal> quiescent_evaluation() const;

    // For every unstable subject s and observer o of s with tally(o) >= L,
    // synthesize the alert o -> s, apply it locally and return it for
    // dissemination. Runs to fixpoint; idempotent.
    std::vector<Alert> apply_implicit_alerts(Tick now);

    // Echo alerts for subjects of `self` stuck unstable past the
    // reinforcement timeout that `self` has not yet alerted about.
    std::vector<Alert> reinforce(const NodeId& self, Tick now);

    ReportMode mode_of(const SubjectKey& key) const;
    ReportMode mode_of_member(const NodeId& id) const;  // REMOVE tally of a member

    int tally(const SubjectKey& key) const;
    bool has_proposed() const { return proposed_; }
    size_t unstable_count() const { return unstable_; }
    size_t stable_count() const { return stable_; }
    size_t stable_join_count() const;
    const CutDetectionCounters& counters() const { return counters_; }

private:
    struct SubjectState {
        std::vector<NodeId> observers;  // sorted distinct designated observers
        uint64_t mask = 0;              // bit i = observers[i] has alerted
        int tally = 0;
        Tick first_unstable = -1;
        std::optional<Member> joiner;

        int h_eff(const ProtocolParams& p) const {
            return std::min<int>(p.h, static_cast<int>(observers.size()));
        }
        int l_eff(const ProtocolParams& p) const { return std::min<int>(p.l, h_eff(p)); }
        ReportMode mode(const ProtocolParams& p) const {
            if (tally >= h_eff(p)) return ReportMode::kStable;
            if (tally >= l_eff(p)) return ReportMode::kUnstable;
            return ReportMode::kNoise;
        }
    };

    SubjectState* subject_for(const Alert& a, IngestOutcome& outcome, SubjectKey& key);
    void note_mode_change(const SubjectKey& key, ReportMode from, ReportMode to, Tick now,
                          SubjectState& st);

    std::shared_ptr<const Configuration> cfg_;
    std::shared_ptr<const KRingTopology> topology_;
    TraceSink* trace_;
    std::map<SubjectKey, SubjectState> subjects_;
    size_t unstable_ = 0;
    size_t stable_ = 0;
    bool proposed_ = false;
    CutDetectionCounters counters_;
};

}  // namespace rapid
