#include "rapid/view_change.hpp"

#include <algorithm>
#include <bit>

namespace rapid {

int fast_quorum(int n) {
    if (n <= 0) throw ProtocolError("fast_quorum needs n >= 1");
    return (3 * n) / 4 + 1;
}

int classic_quorum(int n) {
    if (n <= 0) throw ProtocolError("classic_quorum needs n >= 1");
    return n / 2 + 1;
}

size_t popcount(const Bitmap& b) {
    size_t c = 0;
    for (uint64_t w : b) c += std::popcount(w);
    return c;
}

void set_bit(Bitmap& b, int i) { b[i / 64] |= uint64_t{1} << (i % 64); }

bool get_bit(const Bitmap& b, int i) { return (b[i / 64] >> (i % 64)) & 1; }

VoteState::VoteState(ConfigurationId config_id, int n)
    : config_id_(config_id), n_(n), words_((static_cast<size_t>(n) + 63) / 64) {
    if (n <= 0) throw ProtocolError("vote state needs n >= 1");
}

uint64_t VoteState::vote(const CutProposal& own, int self_index, Tick now) {
    if (my_vote_) throw ProtocolError("double vote in one configuration");
    if (own.config_id != config_id_) throw ProtocolError("vote for a different configuration");
    if (self_index < 0 || self_index >= n_) throw ProtocolError("voter index out of range");
    uint64_t digest = own.digest();
    my_vote_ = digest;
    proposals_.emplace(digest, own);
    auto& bm = votes_.try_emplace(digest, words_, 0).first->second;
    set_bit(bm, self_index);
    check_decided(digest, now);
    return digest;
}

bool VoteState::merge(uint64_t digest, const CutProposal& proposal, const Bitmap& remote,
                      Tick now) {
    if (proposal.config_id != config_id_)
        throw ProtocolError("vote merge from a different configuration");
    if (remote.size() != words_) throw ProtocolError("vote bitmap length mismatch");
    if (proposal.digest() != digest) throw ProtocolError("vote digest does not match proposal");
    auto [it, inserted] = proposals_.emplace(digest, proposal);
    if (!inserted && !(it->second == proposal)) throw ProtocolError("proposal digest collision");
    auto& bm = votes_.try_emplace(digest, words_, 0).first->second;
    for (size_t i = 0; i < words_; ++i) bm[i] |= remote[i];
    bool was_decided = decided_.has_value();
    check_decided(digest, now);
    return !was_decided && decided_.has_value();
}

void VoteState::check_decided(uint64_t digest, Tick) {
    if (decided_) return;
    if (popcount(votes_[digest]) >= static_cast<size_t>(fast_quorum(n_)))
        decided_ = proposals_.at(digest);
}

void VoteState::force_decide(const CutProposal& proposal) {
    if (decided_) {
        if (!(*decided_ == proposal))
            throw InvariantError("conflicting decisions for one configuration");
        return;
    }
    decided_ = proposal;
}

void VoteState::arm_deadline(Tick now, Tick timeout) {
    if (fast_deadline_ < 0) fast_deadline_ = now + timeout;
}

size_t VoteState::count(uint64_t digest) const {
    auto it = votes_.find(digest);
    return it == votes_.end() ? 0 : popcount(it->second);
}

const Bitmap* VoteState::bitmap(uint64_t digest) const {
    auto it = votes_.find(digest);
    return it == votes_.end() ? nullptr : &it->second;
}

const CutProposal* VoteState::proposal(uint64_t digest) const {
    auto it = proposals_.find(digest);
    return it == proposals_.end() ? nullptr : &it->second;
}

std::optional<CutProposal> choose_recovery_value(int n, const std::vector<PromiseInfo>& promises,
                                                 const std::optional<CutProposal>& own) {
    // Rule 1: a classic accept takes precedence; highest ballot wins.
    const PromiseInfo* best = nullptr;
    for (const auto& p : promises)
        if (p.accepted_ballot.valid() && (!best || best->accepted_ballot < p.accepted_ballot))
            best = &p;
    if (best) return best->accepted;

    // Rule 2: count fast votes within the quorum.
    std::map<uint64_t, std::pair<int, const CutProposal*>> counts;
    for (const auto& p : promises) {
        if (!p.fast_vote) continue;
        auto& slot = counts[p.fast_vote->digest()];
        ++slot.first;
        slot.second = &*p.fast_vote;
    }
    int threshold = static_cast<int>(promises.size()) + fast_quorum(n) - n;
    const CutProposal* candidate = nullptr;
    for (const auto& [digest, slot] : counts)
        if (slot.first >= threshold) {
            if (candidate) throw InvariantError("two candidates passed the recovery threshold");
            candidate = slot.second;
        }
    if (candidate) return *candidate;

    // Free choice: own proposal, else the most supported vote seen.
    if (own) return own;
    const CutProposal* fallback = nullptr;
    int fallback_count = 0;
    for (const auto& [digest, slot] : counts)
        if (slot.first > fallback_count) {
            fallback_count = slot.first;
            fallback = slot.second;
        }
    if (fallback) return *fallback;
    return std::nullopt;
}

PaxosState::PaxosState(ConfigurationId config_id, int n) : config_id_(config_id), n_(n) {}

Ballot PaxosState::start_round(int64_t round, int32_t index) {
    my_ballot_ = Ballot{round, index};
    promises_.clear();
    phase_ = Phase::kPreparing;
    ++rounds_started_;
    return my_ballot_;
}

std::optional<CutProposal> PaxosState::on_promise(int from_index, const Ballot& ballot,
                                                  const PromiseInfo& info,
                                                  const std::optional<CutProposal>& own) {
    if (phase_ != Phase::kPreparing || ballot != my_ballot_) return std::nullopt;
    promises_.emplace(from_index, info);
    if (promises_.size() < static_cast<size_t>(classic_quorum(n_))) return std::nullopt;
    std::vector<PromiseInfo> got;
    got.reserve(promises_.size());
    for (const auto& [idx, p] : promises_) got.push_back(p);
    auto value = choose_recovery_value(n_, got, own);
    if (!value) return std::nullopt;  // nothing to decide yet; round fizzles
    phase_ = Phase::kAccepting;
    return value;
}

bool PaxosState::on_prepare(const Ballot& ballot) {
    if (ballot < promised_) return false;
    promised_ = ballot;
    return true;
}

bool PaxosState::on_accept(const Ballot& ballot, const CutProposal& proposal) {
    if (ballot < promised_) return false;
    promised_ = ballot;
    accepted_ballot_ = ballot;
    accepted_ = proposal;
    return true;
}

std::optional<CutProposal> PaxosState::on_learn(int acceptor_index, const Ballot& ballot,
                                                const CutProposal& proposal) {
    if (acceptor_index < 0 || acceptor_index >= n_) return std::nullopt;
    auto& bm = learns_.try_emplace({ballot, proposal.digest()},
                                   Bitmap((static_cast<size_t>(n_) + 63) / 64, 0))
                   .first->second;
    set_bit(bm, acceptor_index);
    if (popcount(bm) >= static_cast<size_t>(classic_quorum(n_))) return proposal;
    return std::nullopt;
}

}  // namespace rapid
