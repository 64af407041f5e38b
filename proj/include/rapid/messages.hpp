#pragma once

#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "rapid/core.hpp"
#include "rapid/serde.hpp"
#include "rapid/view_change.hpp"

namespace rapid {

// --- edge monitoring ---
struct ProbeMsg {
    ConfigurationId config_id;  // prober's current configuration
    uint64_t nonce = 0;
};
struct ProbeAckMsg {
    ConfigurationId config_id;  // responder's current configuration
    uint64_t nonce = 0;
};

// --- cut detection ---
struct AlertBatchMsg {
    std::vector<Alert> alerts;
};

// --- view change ---
struct FastVoteMsg {
    ConfigurationId config_id;
    CutProposal proposal;
    Bitmap bitmap;  // sender's merged view of votes for this proposal
};
struct PrepareMsg {
    ConfigurationId config_id;
    Ballot ballot;
};
struct PromiseMsg {
    ConfigurationId config_id;
    Ballot ballot;
    Ballot accepted_ballot;  // invalid if nothing accepted
    std::optional<CutProposal> accepted;
    std::optional<CutProposal> fast_vote;  // the promiser's fast-round vote
    int32_t acceptor_index = -1;
};
struct RejectMsg {  // stale-ballot NACK carrying the acceptor's promise
    ConfigurationId config_id;
    Ballot ballot;    // the rejected ballot
    Ballot promised;  // what the acceptor has promised instead
};
struct AcceptMsg {
    ConfigurationId config_id;
    Ballot ballot;
    CutProposal proposal;
};
struct LearnMsg {
    ConfigurationId config_id;
    Ballot ballot;  // invalid for fast-path decisions
    CutProposal proposal;
    int32_t acceptor_index = -1;  // -1 when `decided`
    bool decided = false;         // true: sender already decided this value
};

// --- join / configuration exchange ---
struct JoinReqMsg {
    Member joiner;
};
enum class JoinStatus { kOk, kRetry, kWelcome };
struct JoinRespMsg {
    JoinStatus status = JoinStatus::kOk;
    Configuration config;
};
struct JoinPhase2Msg {  // joiner -> each temporary observer
    Member joiner;
    ConfigurationId config_id;
};
struct ConfigReqMsg {  // catch-up and centralized-mode polling
    ConfigurationId have;
};
struct ConfigRespMsg {
    Configuration config;
};
struct LeaveMsg {
    NodeId leaver;
    ConfigurationId config_id;
};

using MessageBody =
    std::variant<ProbeMsg, ProbeAckMsg, AlertBatchMsg, FastVoteMsg, PrepareMsg, PromiseMsg,
                 RejectMsg, AcceptMsg, LearnMsg, JoinReqMsg, JoinRespMsg, JoinPhase2Msg,
                 ConfigReqMsg, ConfigRespMsg, LeaveMsg>;

// Duplicate-suppression id for gossiped broadcasts: (origin, per-origin seq).
struct GossipId {
    NodeId origin;
    uint64_t seq = 0;
    auto operator<=>(const GossipId&) const = default;
};

struct Message {
    Endpoint src;  // origin endpoint (replies go here, even for relayed gossip)
    NodeId src_id;
    std::optional<GossipId> gossip;
    MessageBody body;
};

// Type tag used on the wire and in per-type message counters.
const char* message_type(const MessageBody& body);

void to_json(Json& j, const Message& m);
void from_json(const Json& j, Message& m);

void to_json(Json& j, const Ballot& b);
void from_json(const Json& j, Ballot& b);

struct Outbound {
    Endpoint dst;
    std::shared_ptr<const Message> msg;
};

}  // namespace rapid
