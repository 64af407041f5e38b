#include "rapid/engine.hpp"

#include <algorithm>
#include <bit>

namespace rapid {

void DefaultProbeDetector::record(bool success) {
    outcomes_.push_back(success);
    if (!success) ++failures_;
    if (static_cast<int>(outcomes_.size()) > window_) {
        if (!outcomes_.front()) --failures_;
        outcomes_.pop_front();
    }
}

EdgeMonitor::Verdict DefaultProbeDetector::verdict() const {
    if (!window_full()) return Verdict::kHealthy;
    // failures/window >= num/den, kept in integers
    if (static_cast<int64_t>(failures_) * threshold_.den >=
        static_cast<int64_t>(threshold_.num) * window_)
        return Verdict::kFaulty;
    return Verdict::kHealthy;
}

namespace {

int fanout_for(size_t n) {
    if (n <= 1) return 0;
    int lg = std::bit_width(n - 1);  // ceil(log2 n) for n >= 2
    return static_cast<int>(std::min(n - 1, static_cast<size_t>(lg + 2)));
}

std::tuple<uint64_t, uint64_t, uint64_t> gossip_key(const GossipId& g) {
    return {g.origin.hi, g.origin.lo, g.seq};
}

}  // namespace

NodeRuntime::NodeRuntime(Member self, const Configuration& initial, EngineOptions opts,
                         uint64_t rng_seed)
    : self_(std::move(self)),
      opts_(std::move(opts)),
      params_(initial.params),
      rng_(mix64(rng_seed, self_.id.hi, self_.id.lo)) {
    initial.check_invariants();
    if (!initial.contains(self_.id))
        throw InvariantError("node started with a configuration it is not part of");
    if (!opts_.monitor_factory)
        opts_.monitor_factory = [](const ProtocolParams& p) {
            return std::make_unique<DefaultProbeDetector>(p.consecutive_probe_window,
                                                          p.probe_failure_fraction);
        };
    install(std::make_shared<Configuration>(initial), CutProposal{initial.id, {}, {}}, 0);
}

NodeRuntime::NodeRuntime(Member self, Endpoint seed, ProtocolParams params, EngineOptions opts,
                         uint64_t rng_seed)
    : self_(std::move(self)),
      opts_(std::move(opts)),
      params_(params),
      rng_(mix64(rng_seed, self_.id.hi, self_.id.lo)) {
    if (!opts_.monitor_factory)
        opts_.monitor_factory = [](const ProtocolParams& p) {
            return std::make_unique<DefaultProbeDetector>(p.consecutive_probe_window,
                                                          p.probe_failure_fraction);
        };
    join_ = JoinProgress{std::move(seed), nullptr, -1};
}

bool NodeRuntime::is_member() const { return current_ && current_->contains(self_.id); }

const std::map<std::string, std::string>* NodeRuntime::metadata_of(const NodeId& id) const {
    if (id == self_.id) return &self_.metadata;
    if (!current_) return nullptr;
    const Member* m = current_->find(id);
    return m ? &m->metadata : nullptr;
}

std::vector<Member> NodeRuntime::aux_set(const Configuration& cfg, int aux_count) {
    size_t k = std::min(cfg.members.size(), static_cast<size_t>(std::max(aux_count, 1)));
    return {cfg.members.begin(), cfg.members.begin() + k};
}

std::vector<Member> NodeRuntime::voting_members() const {
    if (!current_) return {};
    if (opts_.mode == RunMode::kCentralized) return aux_set(*current_, opts_.aux_count);
    return current_->members;
}

std::optional<int> NodeRuntime::my_vote_index() const {
    if (!current_) return std::nullopt;
    if (opts_.mode == RunMode::kDecentralized) {
        auto idx = current_->index_of(self_.id);
        if (!idx) return std::nullopt;
        return static_cast<int>(*idx);
    }
    size_t limit = std::min(current_->members.size(),
                            static_cast<size_t>(std::max(opts_.aux_count, 1)));
    for (size_t i = 0; i < limit; ++i)
        if (current_->members[i].id == self_.id) return static_cast<int>(i);
    return std::nullopt;
}

bool NodeRuntime::in_aux() const {
    return opts_.mode == RunMode::kCentralized && my_vote_index().has_value();
}

bool NodeRuntime::may_vote() const {
    if (opts_.mode == RunMode::kDecentralized) return is_member();
    return in_aux();
}

// ---------------------------------------------------------------- plumbing

void NodeRuntime::send(const Endpoint& dst, MessageBody body) {
    bump(message_type(body));
    if (dst == self_.endpoint) {
        // local short-circuit; keeps the classic path uniform
        Message m{self_.endpoint, self_.id, std::nullopt, std::move(body)};
        handle_body(m, now_hint_);
        return;
    }
    out_.push_back(
        {dst, std::make_shared<Message>(Message{self_.endpoint, self_.id, std::nullopt,
                                                std::move(body)})});
}

std::vector<Member> NodeRuntime::gossip_peers() {
    std::vector<Member> peers;
    if (!current_) return peers;
    std::vector<const Member*> others;
    others.reserve(current_->members.size());
    for (const Member& m : current_->members)
        if (m.id != self_.id) others.push_back(&m);
    int fanout = fanout_for(current_->members.size());
    // partial Fisher-Yates over the first `fanout` slots
    for (int i = 0; i < fanout; ++i) {
        size_t j = i + static_cast<size_t>(rng_.next_below(others.size() - i));
        std::swap(others[i], others[j]);
        peers.push_back(*others[i]);
    }
    return peers;
}

void NodeRuntime::gossip(MessageBody body, Tick) {
    if (!current_) return;
    bump(message_type(body));
    auto msg = std::make_shared<Message>(Message{
        self_.endpoint, self_.id, GossipId{self_.id, gossip_seq_++}, std::move(body)});
    gossip_seen_.insert(gossip_key(*msg->gossip));
    for (const Member& peer : gossip_peers()) out_.push_back({peer.endpoint, msg});
}

void NodeRuntime::broadcast_to_members(MessageBody body) {
    for (const Member& m : voting_members()) send(m.endpoint, body);
}

void NodeRuntime::send_to_aux(MessageBody body) {
    for (const Member& m : aux_set(*current_, opts_.aux_count)) {
        if (m.id == self_.id) continue;
        send(m.endpoint, body);
    }
}

void NodeRuntime::queue_alert(Alert a, Tick now) {
    if (cut_->ingest_quiet(a, now) != IngestOutcome::kApplied) return;
    bump("alerts_emitted");
    alert_outbox_.push_back(std::move(a));
}

void NodeRuntime::request_config(const Endpoint& from, ConfigurationId have, Tick) {
    if (from == self_.endpoint) return;
    if (!config_req_sent_.insert(from).second) return;
    send(from, ConfigReqMsg{have});
}

void NodeRuntime::note_foreign_config(const Message& m, ConfigurationId theirs, Tick now) {
    if (!current_ || theirs == current_->id) return;
    if (known_.count(theirs.value)) {
        // sender is on an old configuration; push the current one
        if (m.src != self_.endpoint && config_req_sent_.insert(m.src).second)
            send(m.src, ConfigRespMsg{*current_});
    } else {
        request_config(m.src, current_->id, now);
    }
}

// ------------------------------------------------------------------- step

std::vector<Outbound> NodeRuntime::step(Tick now,
                                        const std::vector<std::shared_ptr<const Message>>& inbox) {
    out_.clear();
    config_req_sent_.clear();
    now_hint_ = now;
    if (departed_) return {};
    for (const auto& m : inbox) {
        if (departed_) break;
        if (m) handle(*m, now);
    }
    if (departed_) return std::move(out_);
    if (!current_) {
        joiner_tick(now);
        return std::move(out_);
    }
    if (leave_pending_ && !leave_sent_ && topology_) {
        for (const NodeId& obs : topology_->distinct_observers_of(self_.id)) {
            const Member* m = current_->find(obs);
            if (m) send(m->endpoint, LeaveMsg{self_.id, current_->id});
        }
        leave_sent_ = true;
    }
    run_probes(now);
    run_alert_passes(now);
    flush_alerts(now, false);
    try_propose(now);
    run_consensus_timers(now);
    centralized_poll(now);
    return std::move(out_);
}

void NodeRuntime::handle(const Message& m, Tick now) {
    if (m.gossip) {
        if (!gossip_seen_.insert(gossip_key(*m.gossip)).second) return;
        handle_body(m, now);
        if (current_ && !departed_) {
            // relay with the original envelope so dedup keys stay stable
            auto copy = std::make_shared<Message>(m);
            for (const Member& peer : gossip_peers()) {
                if (peer.endpoint == m.src) continue;
                bump("gossip_relay");
                out_.push_back({peer.endpoint, copy});
            }
        }
        return;
    }
    handle_body(m, now);
}

void NodeRuntime::handle_body(const Message& m, Tick now) {
    std::visit(
        [&](const auto& body) {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, ProbeMsg>) on_probe(m, body, now);
            else if constexpr (std::is_same_v<T, ProbeAckMsg>) on_probe_ack(m, body, now);
            else if constexpr (std::is_same_v<T, AlertBatchMsg>) on_alert_batch(body, now);
            else if constexpr (std::is_same_v<T, FastVoteMsg>) on_fast_vote(body, now);
            else if constexpr (std::is_same_v<T, PrepareMsg>) on_prepare(m, body, now);
            else if constexpr (std::is_same_v<T, PromiseMsg>) on_promise(body, now);
            else if constexpr (std::is_same_v<T, RejectMsg>) on_reject(body, now);
            else if constexpr (std::is_same_v<T, AcceptMsg>) on_accept(m, body, now);
            else if constexpr (std::is_same_v<T, LearnMsg>) on_learn(body, now);
            else if constexpr (std::is_same_v<T, JoinReqMsg>) on_join_req(m, body, now);
            else if constexpr (std::is_same_v<T, JoinRespMsg>) on_join_resp(m, body, now);
            else if constexpr (std::is_same_v<T, JoinPhase2Msg>) on_join_phase2(m, body, now);
            else if constexpr (std::is_same_v<T, ConfigReqMsg>) on_config_req(m, body, now);
            else if constexpr (std::is_same_v<T, ConfigRespMsg>) adopt_config(body.config, now);
            else if constexpr (std::is_same_v<T, LeaveMsg>) {
                if (current_ && body.config_id == current_->id && cut_ &&
                    current_->contains(body.leaver)) {
                    auto it = monitors_.find(body.leaver);
                    if (it != monitors_.end()) {
                        it->second.alerted = true;
                        Alert a;
                        a.observer = self_.id;
                        a.subject = body.leaver;
                        a.kind = AlertKind::kRemove;
                        a.config_id = current_->id;
                        a.ring_index = it->second.ring_index;
                        queue_alert(std::move(a), now);
                    }
                }
            }
        },
        m.body);
}

// ----------------------------------------------------------------- probes

void NodeRuntime::run_probes(Tick now) {
    for (auto& [subject, mon] : monitors_) {
        auto& pending = mon.outstanding;
        size_t kept = 0;
        for (size_t i = 0; i < pending.size(); ++i) {
            if (now - pending[i].second >= opts_.probe_timeout) {
                mon.detector->record(false);
            } else {
                pending[kept++] = pending[i];
            }
        }
        pending.resize(kept);
        if (!mon.alerted && mon.detector->verdict() == EdgeMonitor::Verdict::kFaulty) {
            mon.alerted = true;
            Alert a;
            a.observer = self_.id;
            a.subject = subject;
            a.kind = AlertKind::kRemove;
            a.config_id = current_->id;
            a.ring_index = mon.ring_index;
            queue_alert(std::move(a), now);
        }
    }
    if (now % opts_.probe_interval != 0) return;
    for (auto& [subject, mon] : monitors_) {
        uint64_t nonce = ++probe_nonce_;
        mon.outstanding.emplace_back(nonce, now);
        send(mon.endpoint, ProbeMsg{current_->id, nonce});
    }
}

void NodeRuntime::on_probe(const Message& m, const ProbeMsg& p, Tick now) {
    send(m.src, ProbeAckMsg{current_ ? current_->id : ConfigurationId{}, p.nonce});
    note_foreign_config(m, p.config_id, now);
}

void NodeRuntime::on_probe_ack(const Message& m, const ProbeAckMsg& p, Tick now) {
    auto it = monitors_.find(m.src_id);
    if (it != monitors_.end()) {
        auto& pending = it->second.outstanding;
        for (size_t i = 0; i < pending.size(); ++i) {
            if (pending[i].first != p.nonce) continue;
            pending.erase(pending.begin() + i);
            it->second.detector->record(true);
            break;
        }
    }
    if (p.config_id.value != 0) note_foreign_config(m, p.config_id, now);
}

// ----------------------------------------------------------------- alerts

void NodeRuntime::on_alert_batch(const AlertBatchMsg& b, Tick now) {
    if (!current_ || !cut_) return;
    if (opts_.mode == RunMode::kCentralized && !in_aux()) return;
    for (const Alert& a : b.alerts) {
        if (a.config_id != current_->id) {
            bump("stale_alerts");
            continue;
        }
        cut_->ingest_quiet(a, now);
    }
}

void NodeRuntime::run_alert_passes(Tick now) {
    for (Alert& a : cut_->reinforce(self_.id, now)) {
        bump("reinforcements");
        alert_outbox_.push_back(std::move(a));
    }
    auto implicit = cut_->apply_implicit_alerts(now);
    if (!implicit.empty()) {
        bump("implicit_alerts", implicit.size());
        if (!opts_.implicit_local_only)
            for (Alert& a : implicit) alert_outbox_.push_back(std::move(a));
    }
}

void NodeRuntime::flush_alerts(Tick now, bool force) {
    if (alert_outbox_.empty()) return;
    if (!force && now - last_flush_ < params_.batching_window &&
        static_cast<int>(alert_outbox_.size()) < opts_.max_batch)
        return;
    AlertBatchMsg batch{std::move(alert_outbox_)};
    alert_outbox_.clear();
    last_flush_ = now;
    if (opts_.mode == RunMode::kCentralized)
        send_to_aux(std::move(batch));
    else
        gossip(std::move(batch), now);
}

// -------------------------------------------------------------- consensus

void NodeRuntime::try_propose(Tick now) {
    if (!votes_ || votes_->decided() || votes_->has_voted()) return;
    if (!may_vote()) return;
    size_t sz = current_->size();
    if (sz < static_cast<size_t>(opts_.min_bootstrap_size) &&
        sz + cut_->stable_join_count() < static_cast<size_t>(opts_.min_bootstrap_size))
        return;
    auto prop = cut_->evaluate(now);
    if (!prop) return;
    auto idx = my_vote_index();
    if (!idx) return;
    uint64_t digest = votes_->vote(*prop, *idx, now);
    votes_->arm_deadline(now, params_.fast_round_timeout);
    FastVoteMsg v{current_->id, *prop, *votes_->bitmap(digest)};
    if (opts_.mode == RunMode::kCentralized)
        send_to_aux(std::move(v));
    else
        gossip(std::move(v), now);
    if (votes_->decided()) decide(*votes_->decided(), now, "fast");
}

void NodeRuntime::on_fast_vote(const FastVoteMsg& v, Tick now) {
    if (!current_ || !votes_) return;
    if (v.config_id != current_->id) {
        bump("stale_votes");
        return;
    }
    votes_->arm_deadline(now, params_.fast_round_timeout);
    bool newly = votes_->merge(v.proposal.digest(), v.proposal, v.bitmap, now);
    if (newly && votes_->decided()) decide(*votes_->decided(), now, "fast");
}

void NodeRuntime::run_consensus_timers(Tick now) {
    if (!votes_ || votes_->decided()) return;
    // periodic anti-entropy on fast votes while undecided
    if (!votes_->empty() &&
        (last_vote_gossip_ < 0 || now - last_vote_gossip_ >= opts_.vote_regossip_interval)) {
        last_vote_gossip_ = now;
        if (votes_->my_vote()) {
            uint64_t digest = *votes_->my_vote();
            FastVoteMsg v{current_->id, *votes_->proposal(digest), *votes_->bitmap(digest)};
            if (opts_.mode == RunMode::kCentralized)
                send_to_aux(std::move(v));
            else
                gossip(std::move(v), now);
        }
    }
    Tick deadline = votes_->fast_deadline();
    if (deadline < 0 || now < deadline) return;
    if (!may_vote()) return;
    auto idx = my_vote_index();
    if (!idx) return;
    bool idle = paxos_->phase() == PaxosState::Phase::kIdle;
    if (idle && now < deadline + static_cast<Tick>(*idx) * opts_.classic_stagger) return;
    if (!idle && (next_classic_at_ < 0 || now < next_classic_at_)) return;
    ++classic_round_;
    Ballot b = paxos_->start_round(classic_round_, *idx);
    ++classic_rounds_;
    bump("classic_rounds");
    next_classic_at_ = now + opts_.classic_retry_timeout;
    broadcast_to_members(PrepareMsg{current_->id, b});
}

void NodeRuntime::on_prepare(const Message& m, const PrepareMsg& p, Tick now) {
    if (!current_ || !paxos_) return;
    if (p.config_id != current_->id) {
        note_foreign_config(m, p.config_id, now);
        return;
    }
    auto idx = my_vote_index();
    if (!idx) return;
    if (!paxos_->on_prepare(p.ballot)) {
        send(m.src, RejectMsg{current_->id, p.ballot, paxos_->promised()});
        return;
    }
    PromiseMsg pm;
    pm.config_id = current_->id;
    pm.ballot = p.ballot;
    pm.accepted_ballot = paxos_->accepted_ballot();
    if (paxos_->accepted_value()) pm.accepted = paxos_->accepted_value();
    if (votes_->my_vote()) pm.fast_vote = *votes_->proposal(*votes_->my_vote());
    pm.acceptor_index = *idx;
    send(m.src, std::move(pm));
}

void NodeRuntime::on_promise(const PromiseMsg& p, Tick) {
    if (!current_ || !paxos_) return;
    if (p.config_id != current_->id) return;
    PromiseInfo info{p.accepted_ballot, p.accepted, p.fast_vote};
    std::optional<CutProposal> own;
    if (votes_->my_vote())
        own = *votes_->proposal(*votes_->my_vote());
    else
        own = cut_ ? cut_->quiescent_evaluation() : std::nullopt;
    auto value = paxos_->on_promise(p.acceptor_index, p.ballot, info, own);
    if (value) broadcast_to_members(AcceptMsg{current_->id, p.ballot, *value});
}

void NodeRuntime::on_reject(const RejectMsg& r, Tick now) {
    if (!current_ || !paxos_ || votes_->decided()) return;
    if (r.config_id != current_->id) return;
    if (r.promised.round > classic_round_) {
        classic_round_ = r.promised.round;
        // retry soon after the competing round has had a chance
        next_classic_at_ = now + opts_.classic_retry_timeout / 2 + 1;
    }
}

void NodeRuntime::on_accept(const Message& m, const AcceptMsg& a, Tick now) {
    if (!current_ || !paxos_) return;
    if (a.config_id != current_->id) {
        note_foreign_config(m, a.config_id, now);
        return;
    }
    auto idx = my_vote_index();
    if (!idx) return;
    if (!paxos_->on_accept(a.ballot, a.proposal)) {
        send(m.src, RejectMsg{current_->id, a.ballot, paxos_->promised()});
        return;
    }
    broadcast_to_members(LearnMsg{current_->id, a.ballot, a.proposal, *idx, false});
}

void NodeRuntime::on_learn(const LearnMsg& l, Tick now) {
    if (!current_) return;
    if (l.config_id != current_->id) return;
    if (l.decided) {
        decide(l.proposal, now, "learned");
        return;
    }
    if (!paxos_) return;
    auto v = paxos_->on_learn(l.acceptor_index, l.ballot, l.proposal);
    if (v) decide(*v, now, "classic");
}

// ---------------------------------------------------------------- joining

void NodeRuntime::joiner_tick(Tick now) {
    if (!join_) return;
    if (join_->last_action >= 0 && now - join_->last_action < opts_.join_poll_interval) return;
    join_->last_action = now;
    send(join_->seed, JoinReqMsg{self_});
    if (join_->target) {
        // re-run phase 2 in case earlier alerts were lost or raced
        for (const NodeId& obs : temporary_observers(*join_->target, self_.id)) {
            const Member* m = join_->target->find(obs);
            if (m) send(m->endpoint, JoinPhase2Msg{self_, join_->target->id});
        }
    }
}

void NodeRuntime::on_join_req(const Message& m, const JoinReqMsg& jr, Tick) {
    if (!current_) return;
    if (current_->contains(jr.joiner.id)) {
        send(m.src, JoinRespMsg{JoinStatus::kWelcome, *current_});
        return;
    }
    send(m.src, JoinRespMsg{JoinStatus::kOk, *current_});
}

void NodeRuntime::on_join_resp(const Message&, const JoinRespMsg& jr, Tick now) {
    if (current_ || !join_) return;  // already admitted
    switch (jr.status) {
        case JoinStatus::kWelcome:
            if (jr.config.contains(self_.id)) adopt_config(jr.config, now);
            return;
        case JoinStatus::kOk:
        case JoinStatus::kRetry: {
            auto cfg = std::make_shared<Configuration>(jr.config);
            join_->target = cfg;
            join_->last_action = now;
            for (const NodeId& obs : temporary_observers(*cfg, self_.id)) {
                const Member* mem = cfg->find(obs);
                if (mem) send(mem->endpoint, JoinPhase2Msg{self_, cfg->id});
            }
            return;
        }
    }
}

void NodeRuntime::on_join_phase2(const Message& m, const JoinPhase2Msg& j2, Tick now) {
    if (!current_) return;
    if (j2.config_id != current_->id) {
        send(m.src, JoinRespMsg{JoinStatus::kRetry, *current_});
        return;
    }
    if (current_->contains(j2.joiner.id)) {
        send(m.src, JoinRespMsg{JoinStatus::kWelcome, *current_});
        return;
    }
    auto observers = temporary_observers(*current_, j2.joiner.id);
    std::sort(observers.begin(), observers.end());
    auto it = std::lower_bound(observers.begin(), observers.end(), self_.id);
    if (it == observers.end() || *it != self_.id) return;  // misdirected
    Alert a;
    a.observer = self_.id;
    a.subject = j2.joiner.id;
    a.kind = AlertKind::kJoin;
    a.config_id = current_->id;
    a.ring_index = static_cast<int>(it - observers.begin());
    a.joiner = j2.joiner;
    queue_alert(std::move(a), now);
}

void NodeRuntime::on_config_req(const Message& m, const ConfigReqMsg& cr, Tick) {
    if (!current_) return;
    if (cr.have != current_->id) send(m.src, ConfigRespMsg{*current_});
}

void NodeRuntime::adopt_config(const Configuration& cfg, Tick now) {
    if (known_.count(cfg.id.value)) return;  // old news
    cfg.check_invariants();
    if (cfg.contains(self_.id)) {
        install(std::make_shared<Configuration>(cfg), CutProposal{cfg.id, {}, {}}, now);
        return;
    }
    if (current_) {
        // a configuration we never saw and are not part of: we were removed
        bump("removed_notice");
        known_[cfg.id.value] = std::make_shared<Configuration>(cfg);
        ViewChangeEvent ev{known_[cfg.id.value], CutProposal{cfg.id, {}, {}}, now};
        events_.push_back(ev);
        if (callback_) callback_(ev);
        departed_ = true;
        monitors_.clear();
        cut_.reset();
        votes_.reset();
        paxos_.reset();
    }
}

// ------------------------------------------------------------ view change

void NodeRuntime::decide(const CutProposal& cut, Tick now, const char* how) {
    if (!current_ || cut.config_id != current_->id) return;
    if (cut.empty()) throw InvariantError("decided an empty cut");
    votes_->force_decide(cut);
    paxos_->mark_decided();
    bump(std::string("decided_") + how);

    bool announce = std::string(how) != "learned";

    // A cut that removes every member dissolves the cluster: there is no
    // successor configuration to install, everyone simply departs.
    if (cut.joins.empty() && cut.removals.size() == current_->members.size()) {
        if (announce && opts_.mode == RunMode::kDecentralized)
            gossip(LearnMsg{current_->id, Ballot{}, cut, -1, true}, now);
        bump("dissolved");
        departed_ = true;
        monitors_.clear();
        alert_outbox_.clear();
        cut_.reset();
        votes_.reset();
        paxos_.reset();
        topology_.reset();
        return;
    }

    Configuration next = apply_cut(*current_, cut);
    auto next_ptr = std::make_shared<Configuration>(std::move(next));
    if (announce) {
        if (opts_.mode == RunMode::kCentralized && in_aux()) {
            for (const Member& m : current_->members)
                if (m.id != self_.id) send(m.endpoint, ConfigRespMsg{*next_ptr});
        } else if (opts_.mode == RunMode::kDecentralized) {
            gossip(LearnMsg{current_->id, Ballot{}, cut, -1, true}, now);
        }
    }
    // welcome joiners we were responsible for
    for (const Member& j : cut.joins) {
        auto obs = temporary_observers(*current_, j.id);
        bool mine = std::find(obs.begin(), obs.end(), self_.id) != obs.end();
        if (mine || (opts_.mode == RunMode::kCentralized && in_aux()))
            send(j.endpoint, JoinRespMsg{JoinStatus::kWelcome, *next_ptr});
    }
    install(next_ptr, cut, now);
}

void NodeRuntime::install(std::shared_ptr<const Configuration> cfg, const CutProposal& cut,
                          Tick now) {
    known_[cfg->id.value] = cfg;
    current_ = cfg;
    params_ = cfg->params;
    join_.reset();
    ViewChangeEvent ev{cfg, cut, now};
    events_.push_back(ev);
    if (callback_) callback_(ev);

    monitors_.clear();
    alert_outbox_.clear();
    last_flush_ = now;
    next_classic_at_ = -1;
    classic_round_ = 0;
    last_vote_gossip_ = -1;

    if (!cfg->contains(self_.id)) {
        departed_ = true;
        cut_.reset();
        votes_.reset();
        paxos_.reset();
        topology_.reset();
        return;
    }
    topology_ = std::make_shared<KRingTopology>(KRingTopology::build(*cfg));
    cut_ = std::make_unique<CutDetector>(current_, topology_, opts_.trace);
    int nv = static_cast<int>(voting_members().size());
    votes_ = std::make_unique<VoteState>(cfg->id, nv);
    paxos_ = std::make_unique<PaxosState>(cfg->id, nv);

    auto subjects = topology_->subjects_of(self_.id);
    for (int r = 0; r < static_cast<int>(subjects.size()); ++r) {
        const NodeId& s = subjects[r];
        if (s == self_.id) continue;
        auto [it, inserted] = monitors_.try_emplace(s);
        if (!inserted) continue;
        const Member* m = cfg->find(s);
        it->second.endpoint = m->endpoint;
        it->second.detector = opts_.monitor_factory(cfg->params);
        it->second.ring_index = r;
    }
}

void NodeRuntime::centralized_poll(Tick now) {
    if (opts_.mode != RunMode::kCentralized || !current_ || in_aux()) return;
    if (last_aux_poll_ >= 0 && now - last_aux_poll_ < opts_.aux_poll_interval) return;
    last_aux_poll_ = now;
    auto aux = aux_set(*current_, opts_.aux_count);
    if (aux.empty()) return;
    const Member& pick = aux[rng_.next_below(aux.size())];
    if (pick.id == self_.id) return;
    send(pick.endpoint, ConfigReqMsg{current_->id});
}

}  // namespace rapid
