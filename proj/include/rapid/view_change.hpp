#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "rapid/core.hpp"

namespace rapid {

// Fast-path quorum: strictly more than three quarters of the membership.
int fast_quorum(int n);
// Classic majority quorum used by the recovery path.
int classic_quorum(int n);

// Totally ordered ballot for the recovery path. `index` is the coordinator's
// sorted member index, which breaks ties between rounds deterministically.
struct Ballot {
    int64_t round = -1;  // -1 = null ballot
    int32_t index = -1;

    bool valid() const { return round >= 0; }
    auto operator<=>(const Ballot&) const = default;
};

using Bitmap = std::vector<uint64_t>;  // n bits, LSB-first within each word

size_t popcount(const Bitmap& b);
void set_bit(Bitmap& b, int i);
bool get_bit(const Bitmap& b, int i);

// One fast round of vote aggregation for a single configuration. Votes are
// bitmaps keyed by proposal digest; merging is a commutative, associative,
// idempotent union, so gossip order never matters.
class VoteState {
public:
    VoteState(ConfigurationId config_id, int n);

    ConfigurationId config_id() const { return config_id_; }
    int n() const { return n_; }

    // Cast this node's single fast-round vote. Returns the digest voted for.
    // Throws ProtocolError on a second vote.
    uint64_t vote(const CutProposal& own, int self_index, Tick now);

    // Merge a remote (proposal, bitmap) pair. Returns true if this merge made
    // the fast round reach a decision. Throws on bitmap size mismatch or
    // digest collision.
    bool merge(uint64_t digest, const CutProposal& proposal, const Bitmap& remote, Tick now);

    // Record a decision reached outside the fast path (classic round or a
    // learned decision). Throws InvariantError if it contradicts an earlier
    // decision for this configuration.
    void force_decide(const CutProposal& proposal);

    bool has_voted() const { return my_vote_.has_value(); }
    std::optional<uint64_t> my_vote() const { return my_vote_; }
    const std::optional<CutProposal>& decided() const { return decided_; }
    Tick fast_deadline() const { return fast_deadline_; }
    void arm_deadline(Tick now, Tick timeout);

    size_t count(uint64_t digest) const;
    const Bitmap* bitmap(uint64_t digest) const;
    const CutProposal* proposal(uint64_t digest) const;
    const std::map<uint64_t, CutProposal>& proposals() const { return proposals_; }
    bool empty() const { return votes_.empty(); }

private:
    void check_decided(uint64_t digest, Tick now);

    ConfigurationId config_id_;
    int n_;
    size_t words_;
    std::map<uint64_t, Bitmap> votes_;
    std::map<uint64_t, CutProposal> proposals_;
    std::optional<uint64_t> my_vote_;
    std::optional<CutProposal> decided_;
    Tick fast_deadline_ = -1;
};

// What an acceptor reports in a PROMISE: its highest classic accept, if any,
// plus the fast-round vote it cast, if any.
struct PromiseInfo {
    Ballot accepted_ballot;                 // invalid if never accepted
    std::optional<CutProposal> accepted;
    std::optional<CutProposal> fast_vote;
};

// Coordinator value selection from a majority quorum of promises.
//
// A classic accept in the promises wins outright (highest ballot). Otherwise
// fast votes within the quorum Q are counted: a value is a candidate iff its
// count >= |Q| + fast_quorum(n) - n. Since that threshold exceeds |Q|/2, at
// most one candidate exists; any value decided by a fast quorum intersects
// every majority in at least threshold voters, so a decided value is always
// the candidate. With no candidate the coordinator is free and takes `own`,
// falling back to the most-voted value seen in the promises.
std::optional<CutProposal> choose_recovery_value(int n, const std::vector<PromiseInfo>& promises,
                                                 const std::optional<CutProposal>& own);

// Classic Paxos per-node state for the recovery path (acceptor + coordinator
// + learner roles of one node).
class PaxosState {
public:
    enum class Phase { kIdle, kPreparing, kAccepting, kDecided };

    PaxosState(ConfigurationId config_id, int n);

    Phase phase() const { return phase_; }
    Ballot promised() const { return promised_; }
    Ballot accepted_ballot() const { return accepted_ballot_; }
    const std::optional<CutProposal>& accepted_value() const { return accepted_; }
    int rounds_started() const { return rounds_started_; }

    // --- coordinator ---
    // Begin round `round` as coordinator with sorted member index `index`.
    Ballot start_round(int64_t round, int32_t index);
    // Returns the value to send in ACCEPT once a majority of promises is in.
    std::optional<CutProposal> on_promise(int from_index, const Ballot& ballot,
                                          const PromiseInfo& info,
                                          const std::optional<CutProposal>& own);

    // --- acceptor ---
    // Returns true if the prepare is admitted (promise should be sent);
    // false means stale ballot, reply with promised() for backoff.
    bool on_prepare(const Ballot& ballot);
    // Returns true if the accept is admitted (learn should be broadcast).
    bool on_accept(const Ballot& ballot, const CutProposal& proposal);

    // --- learner ---
    // Count an acceptor's LEARN. Returns the decided value once a majority
    // of acceptors accepted the same (ballot, proposal).
    std::optional<CutProposal> on_learn(int acceptor_index, const Ballot& ballot,
                                        const CutProposal& proposal);

    void mark_decided() { phase_ = Phase::kDecided; }

private:
    ConfigurationId config_id_;
    int n_;
    Phase phase_ = Phase::kIdle;
    Ballot my_ballot_;
    Ballot promised_;
    Ballot accepted_ballot_;
    std::optional<CutProposal> accepted_;
    std::map<int, PromiseInfo> promises_;  // for my_ballot_
    std::map<std::pair<Ballot, uint64_t>, Bitmap> learns_;
    int rounds_started_ = 0;
};

}  // namespace rapid
