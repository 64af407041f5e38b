#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "rapid/core.hpp"
#include "rapid/cut_detection.hpp"
#include "rapid/messages.hpp"
#include "rapid/topology.hpp"
#include "rapid/view_change.hpp"

namespace rapid {

// Pluggable edge monitor: feed probe outcomes, read a verdict.
class EdgeMonitor {
public:
    enum class Verdict { kHealthy, kFaulty };
    virtual ~EdgeMonitor() = default;
    virtual void record(bool success) = 0;
    virtual Verdict verdict() const = 0;
};

// Default detector: FAULTY iff, with a full window of the last
// `consecutive_probe_window` probe outcomes, the failure fraction reaches
// `probe_failure_fraction`.
class DefaultProbeDetector : public EdgeMonitor {
public:
    DefaultProbeDetector(int window, Fraction threshold)
        : window_(window), threshold_(threshold) {}
    void record(bool success) override;
    Verdict verdict() const override;
    int failures() const { return failures_; }
    bool window_full() const { return static_cast<int>(outcomes_.size()) == window_; }

private:
    int window_;
    Fraction threshold_;
    std::deque<bool> outcomes_;
    int failures_ = 0;
};

using MonitorFactory = std::function<std::unique_ptr<EdgeMonitor>(const ProtocolParams&)>;

enum class RunMode { kDecentralized, kCentralized };

struct EngineOptions {
    RunMode mode = RunMode::kDecentralized;
    int aux_count = 3;  // |S| for the centralized mode
    bool implicit_local_only = false;

    Tick probe_interval = 1;
    Tick probe_timeout = 3;       // unanswered probe counts as a failure
    Tick join_poll_interval = 5;  // joiner retry cadence
    Tick aux_poll_interval = 5;   // centralized members probe S at this period
    Tick vote_regossip_interval = 5;
    Tick classic_stagger = 4;        // per-rank delay before starting a classic round
    Tick classic_retry_timeout = 20; // restart a stalled classic round
    int min_bootstrap_size = 3;      // seed defers cuts until a quorum-capable cluster
    int max_batch = 64;              // alert-batch flush threshold

    MonitorFactory monitor_factory;  // defaults to DefaultProbeDetector
    TraceSink* trace = nullptr;      // cut-detection trace events
};

struct ViewChangeEvent {
    std::shared_ptr<const Configuration> config;  // the newly installed view
    CutProposal cut;                              // decided cut (empty on first install)
    Tick at = 0;
};

// Per-node protocol orchestration in pure-transition form: the owner calls
// step(now, inbox) once per tick and routes the returned messages. The
// simulator drives many runtimes on one thread; the loopback transport
// drives one per process.
class NodeRuntime {
public:
    // Start as a member of `initial` (bootstrap seed or statically configured).
    NodeRuntime(Member self, const Configuration& initial, EngineOptions opts, uint64_t rng_seed);
    // Start as a joiner: acquire the configuration from `seed` and go through
    // the join handshake until admitted.
    NodeRuntime(Member self, Endpoint seed, ProtocolParams params, EngineOptions opts,
                uint64_t rng_seed);

    NodeRuntime(const NodeRuntime&) = delete;
    NodeRuntime& operator=(const NodeRuntime&) = delete;

    std::vector<Outbound> step(Tick now, const std::vector<std::shared_ptr<const Message>>& inbox);

    // Voluntary departure: next step notifies this node's observers, which
    // alert immediately; the node departs once its removal is decided.
    void leave() { leave_pending_ = true; }

    void on_view_change(std::function<void(const ViewChangeEvent&)> cb) { callback_ = std::move(cb); }

    const Member& self() const { return self_; }
    std::shared_ptr<const Configuration> config() const { return current_; }
    bool has_config() const { return current_ != nullptr; }
    bool is_member() const;
    bool departed() const { return departed_; }
    size_t cluster_size() const { return current_ ? current_->size() : 0; }

    // Uniform metadata lookup across the current view.
    const std::map<std::string, std::string>* metadata_of(const NodeId& id) const;

    const std::vector<ViewChangeEvent>& installed_views() const { return events_; }
    const std::map<std::string, uint64_t>& counters() const { return counters_; }
    int classic_rounds_started() const { return classic_rounds_; }
    const CutDetector* cut_detector() const { return cut_.get(); }
    const VoteState* vote_state() const { return votes_.get(); }

    // Sorted aux set (first aux_count members) used by the centralized mode.
    static std::vector<Member> aux_set(const Configuration& cfg, int aux_count);

private:
    struct Monitor {
        Endpoint endpoint;
        std::unique_ptr<EdgeMonitor> detector;
        std::vector<std::pair<uint64_t, Tick>> outstanding;  // (nonce, sent tick)
        int ring_index = 0;  // lowest ring this edge appears on
        bool alerted = false;
    };

    struct JoinProgress {
        Endpoint seed;
        std::shared_ptr<const Configuration> target;
        Tick last_action = -1;
    };

    // message handling
    void handle(const Message& m, Tick now);
    void handle_body(const Message& m, Tick now);
    void on_probe(const Message& m, const ProbeMsg& p, Tick now);
    void on_probe_ack(const Message& m, const ProbeAckMsg& p, Tick now);
    void on_alert_batch(const AlertBatchMsg& b, Tick now);
    void on_fast_vote(const FastVoteMsg& v, Tick now);
    void on_prepare(const Message& m, const PrepareMsg& p, Tick now);
    void on_promise(const PromiseMsg& p, Tick now);
    void on_reject(const RejectMsg& r, Tick now);
    void on_accept(const Message& m, const AcceptMsg& a, Tick now);
    void on_learn(const LearnMsg& l, Tick now);
    void on_join_req(const Message& m, const JoinReqMsg& jr, Tick now);
    void on_join_resp(const Message& m, const JoinRespMsg& jr, Tick now);
    void on_join_phase2(const Message& m, const JoinPhase2Msg& j2, Tick now);
    void on_config_req(const Message& m, const ConfigReqMsg& cr, Tick now);
    void adopt_config(const Configuration& cfg, Tick now);

    // periodic work
    void run_probes(Tick now);
    void run_alert_passes(Tick now);
    void flush_alerts(Tick now, bool force);
    void try_propose(Tick now);
    void run_consensus_timers(Tick now);
    void joiner_tick(Tick now);
    void centralized_poll(Tick now);

    // view change
    void decide(const CutProposal& cut, Tick now, const char* how);
    void install(std::shared_ptr<const Configuration> cfg, const CutProposal& cut, Tick now);

    // plumbing
    void send(const Endpoint& dst, MessageBody body);
    void gossip(MessageBody body, Tick now);
    void broadcast_to_members(MessageBody body);  // one unicast per member
    void send_to_aux(MessageBody body);
    void queue_alert(Alert a, Tick now);
    void request_config(const Endpoint& from, ConfigurationId have, Tick now);
    void note_foreign_config(const Message& m, ConfigurationId theirs, Tick now);
    std::vector<Member> gossip_peers();
    std::vector<Member> voting_members() const;
    std::optional<int> my_vote_index() const;
    bool in_aux() const;
    bool may_vote() const;
    void bump(const std::string& key, uint64_t delta = 1) { counters_[key] += delta; }

    Member self_;
    EngineOptions opts_;
    ProtocolParams params_;  // used before any configuration is installed
    SplitMix64 rng_;

    std::shared_ptr<const Configuration> current_;
    std::map<uint64_t, std::shared_ptr<const Configuration>> known_;
    std::shared_ptr<const KRingTopology> topology_;
    std::unique_ptr<CutDetector> cut_;
    std::unique_ptr<VoteState> votes_;
    std::unique_ptr<PaxosState> paxos_;
    std::map<NodeId, Monitor> monitors_;

    std::vector<Alert> alert_outbox_;
    Tick last_flush_ = -1;
    std::vector<Outbound> out_;

    uint64_t gossip_seq_ = 0;
    uint64_t probe_nonce_ = 0;
    std::set<std::tuple<uint64_t, uint64_t, uint64_t>> gossip_seen_;

    std::optional<JoinProgress> join_;
    bool departed_ = false;
    bool leave_pending_ = false;
    bool leave_sent_ = false;

    Tick now_hint_ = 0;  // current tick, for self-delivered messages
    Tick next_classic_at_ = -1;
    int64_t classic_round_ = 0;
    int classic_rounds_ = 0;
    Tick last_vote_gossip_ = -1;
    Tick last_aux_poll_ = -1;
    std::set<Endpoint> config_req_sent_;  // rate limit, cleared each tick

    std::vector<ViewChangeEvent> events_;
    std::function<void(const ViewChangeEvent&)> callback_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace rapid
