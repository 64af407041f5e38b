#include "rapid/cut_detection.hpp"

#include <algorithm>

namespace rapid {

const char* to_string(ReportMode m) {
    switch (m) {
        case ReportMode::kNoise: return "NOISE";
        case ReportMode::kUnstable: return "UNSTABLE";
        case ReportMode::kStable: return "STABLE";
    }
    return "?";
}

CutDetector::CutDetector(std::shared_ptr<const Configuration> cfg,
                         std::shared_ptr<const KRingTopology> topology, TraceSink* trace)
    : cfg_(std::move(cfg)), topology_(std::move(topology)), trace_(trace) {
    if (!cfg_ || !topology_) throw InvariantError("cut detector needs a configuration and topology");
    if (topology_->config_id() != cfg_->id)
        throw InvariantError("topology was built for a different configuration");
    if (cfg_->params.k > 64) throw InvariantError("observer masks support K <= 64");
}

CutDetector::SubjectState* CutDetector::subject_for(const Alert& a, IngestOutcome& outcome,
                                                    SubjectKey& key) {
    if (a.kind == AlertKind::kRemove) {
        key = SubjectKey{AlertKind::kRemove, a.subject, Endpoint{}};
        auto it = subjects_.find(key);
        if (it != subjects_.end()) return &it->second;
        if (!cfg_->find(a.subject)) {
            outcome = IngestOutcome::kInvalidSubject;
            return nullptr;
        }
        SubjectState st;
        st.observers = topology_->distinct_observers_of(a.subject);
        if (st.observers.empty()) {
            outcome = IngestOutcome::kInvalidSubject;
            return nullptr;
        }
        return &subjects_.emplace(key, std::move(st)).first->second;
    }

    // JOIN: the alert must carry the joiner so every process can agree on the
    // member being added and on its temporary observer set.
    if (!a.joiner || a.joiner->id != a.subject) {
        outcome = IngestOutcome::kInvalidSubject;
        return nullptr;
    }
    key = SubjectKey{AlertKind::kJoin, a.subject, a.joiner->endpoint};
    auto it = subjects_.find(key);
    if (it != subjects_.end()) return &it->second;
    if (cfg_->find(a.subject)) {
        outcome = IngestOutcome::kInvalidSubject;
        return nullptr;
    }
    SubjectState st;
    st.observers = temporary_observers(*cfg_, a.subject);
    std::sort(st.observers.begin(), st.observers.end());
    st.observers.erase(std::unique(st.observers.begin(), st.observers.end()),
                       st.observers.end());
    if (st.observers.empty()) {
        outcome = IngestOutcome::kInvalidSubject;
        return nullptr;
    }
    st.joiner = *a.joiner;
    return &subjects_.emplace(key, std::move(st)).first->second;
}

void CutDetector::note_mode_change(const SubjectKey& key, ReportMode from, ReportMode to,
                                   Tick now, SubjectState& st) {
    if (from == to) return;
    if (from == ReportMode::kUnstable) --unstable_;
    if (from == ReportMode::kStable) --stable_;
    if (to == ReportMode::kUnstable) {
        ++unstable_;
        if (st.first_unstable < 0) st.first_unstable = now;
    }
    if (to == ReportMode::kStable) ++stable_;
    if (trace_) trace_->on_mode_change(key, from, to, now);
}

IngestOutcome CutDetector::ingest_quiet(const Alert& a, Tick now) {
    if (a.config_id != cfg_->id) {
        ++counters_.stale_config;
        return IngestOutcome::kStaleConfig;
    }
    IngestOutcome outcome = IngestOutcome::kApplied;
    SubjectKey key;
    SubjectState* st = subject_for(a, outcome, key);
    if (!st) {
        ++counters_.invalid_subject;
        return outcome;
    }
    auto obs = std::lower_bound(st->observers.begin(), st->observers.end(), a.observer);
    if (obs == st->observers.end() || *obs != a.observer) {
        ++counters_.invalid_observer;
        return IngestOutcome::kInvalidObserver;
    }
    uint64_t bit = uint64_t{1} << (obs - st->observers.begin());
    if (st->mask & bit) {
        ++counters_.duplicates;
        return IngestOutcome::kDuplicate;
    }
    ReportMode before = st->mode(cfg_->params);
    st->mask |= bit;
    ++st->tally;
    ++counters_.applied;
    if (trace_) trace_->on_alert_ingested(a, now);
    note_mode_change(key, before, st->mode(cfg_->params), now, *st);
    return IngestOutcome::kApplied;
}

std::optional<CutProposal> CutDetector::evaluate(Tick now) {
    if (proposed_) return std::nullopt;
    auto cut = quiescent_evaluation();
    if (!cut) return std::nullopt;
    proposed_ = true;
    if (trace_) trace_->on_proposal(*cut, now);
    return cut;
}

std::optional<CutProposal> CutDetector::quiescent_evaluation() const {
    if (stable_ == 0 || unstable_ != 0) return std::nullopt;
    CutProposal cut;
    cut.config_id = cfg_->id;
    for (const auto& [key, st] : subjects_) {
        if (st.mode(cfg_->params) != ReportMode::kStable) continue;
        if (key.kind == AlertKind::kRemove)
            cut.removals.push_back(key.id);
        else
            cut.joins.push_back(*st.joiner);
    }
    cut.canonicalize();
    return cut;
}

std::optional<CutProposal> CutDetector::ingest(const Alert& a, Tick now) {
    ingest_quiet(a, now);
    return evaluate(now);
}

std::vector<Alert> CutDetector::apply_implicit_alerts(Tick now) {
    std::vector<Alert> out;
    // Applying an alert can flip its subject to stable, so re-scan until the
    // unstable set stops yielding new entries.
    bool changed = true;
    while (changed && unstable_ > 0) {
        changed = false;
        for (auto& [key, st] : subjects_) {
            if (st.mode(cfg_->params) != ReportMode::kUnstable) continue;
            for (size_t i = 0; i < st.observers.size(); ++i) {
                if (st.mask & (uint64_t{1} << i)) continue;
                if (mode_of_member(st.observers[i]) == ReportMode::kNoise) continue;
                Alert a;
                a.observer = st.observers[i];
                a.subject = key.id;
                a.kind = key.kind;
                a.config_id = cfg_->id;
                a.ring_index = static_cast<int>(i);
                a.joiner = st.joiner;
                if (ingest_quiet(a, now) == IngestOutcome::kApplied) {
                    out.push_back(std::move(a));
                    changed = true;
                }
                if (st.mode(cfg_->params) != ReportMode::kUnstable) break;
            }
        }
    }
    return out;
}

std::vector<Alert> CutDetector::reinforce(const NodeId& self, Tick now) {
    std::vector<Alert> out;
    Tick timeout = cfg_->params.reinforcement_timeout;
    for (auto& [key, st] : subjects_) {
        if (st.mode(cfg_->params) != ReportMode::kUnstable) continue;
        if (st.first_unstable < 0 || now - st.first_unstable < timeout) continue;
        auto obs = std::lower_bound(st.observers.begin(), st.observers.end(), self);
        if (obs == st.observers.end() || *obs != self) continue;
        size_t i = obs - st.observers.begin();
        if (st.mask & (uint64_t{1} << i)) continue;
        Alert a;
        a.observer = self;
        a.subject = key.id;
        a.kind = key.kind;
        a.config_id = cfg_->id;
        a.ring_index = static_cast<int>(i);
        a.joiner = st.joiner;
        if (ingest_quiet(a, now) == IngestOutcome::kApplied) out.push_back(std::move(a));
    }
    return out;
}

ReportMode CutDetector::mode_of(const SubjectKey& key) const {
    auto it = subjects_.find(key);
    if (it == subjects_.end()) return ReportMode::kNoise;
    return it->second.mode(cfg_->params);
}

ReportMode CutDetector::mode_of_member(const NodeId& id) const {
    return mode_of(SubjectKey{AlertKind::kRemove, id, Endpoint{}});
}

int CutDetector::tally(const SubjectKey& key) const {
    auto it = subjects_.find(key);
    if (it == subjects_.end()) return 0;
    return it->second.tally;
}

size_t CutDetector::stable_join_count() const {
    size_t c = 0;
    for (const auto& [key, st] : subjects_)
        if (key.kind == AlertKind::kJoin && st.mode(cfg_->params) == ReportMode::kStable) ++c;
    return c;
}

}  // namespace rapid
