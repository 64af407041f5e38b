#include "rapid/messages.hpp"

namespace rapid {

namespace {

template <class... Ts>
struct Overload : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overload(Ts...) -> Overload<Ts...>;

const char* join_status_str(JoinStatus s) {
    switch (s) {
        case JoinStatus::kOk: return "OK";
        case JoinStatus::kRetry: return "RETRY";
        case JoinStatus::kWelcome: return "WELCOME";
    }
    return "?";
}

JoinStatus parse_join_status(const std::string& s) {
    if (s == "OK") return JoinStatus::kOk;
    if (s == "RETRY") return JoinStatus::kRetry;
    if (s == "WELCOME") return JoinStatus::kWelcome;
    throw ProtocolError("unknown join status " + s);
}

std::optional<CutProposal> opt_proposal(const Json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    return j.at(key).get<CutProposal>();
}

}  // namespace

const char* message_type(const MessageBody& body) {
    return std::visit(Overload{[](const ProbeMsg&) { return "probe"; },
                               [](const ProbeAckMsg&) { return "probe_ack"; },
                               [](const AlertBatchMsg&) { return "alert_batch"; },
                               [](const FastVoteMsg&) { return "fast_vote"; },
                               [](const PrepareMsg&) { return "prepare"; },
                               [](const PromiseMsg&) { return "promise"; },
                               [](const RejectMsg&) { return "reject"; },
                               [](const AcceptMsg&) { return "accept"; },
                               [](const LearnMsg&) { return "learn"; },
                               [](const JoinReqMsg&) { return "join_req"; },
                               [](const JoinRespMsg&) { return "join_resp"; },
                               [](const JoinPhase2Msg&) { return "join_phase2"; },
                               [](const ConfigReqMsg&) { return "config_req"; },
                               [](const ConfigRespMsg&) { return "config_resp"; },
                               [](const LeaveMsg&) { return "leave"; }},
                      body);
}

void to_json(Json& j, const Ballot& b) { j = Json{{"round", b.round}, {"index", b.index}}; }

void from_json(const Json& j, Ballot& b) {
    b.round = j.at("round").get<int64_t>();
    b.index = j.at("index").get<int32_t>();
}

namespace {

Json body_to_json(const MessageBody& body) {
    Json j = std::visit(
        Overload{
            [](const ProbeMsg& m) {
                return Json{{"config_id", m.config_id}, {"nonce", m.nonce}};
            },
            [](const ProbeAckMsg& m) {
                return Json{{"config_id", m.config_id}, {"nonce", m.nonce}};
            },
            [](const AlertBatchMsg& m) { return Json{{"alerts", m.alerts}}; },
            [](const FastVoteMsg& m) {
                return Json{{"config_id", m.config_id},
                            {"proposal", m.proposal},
                            {"bitmap", m.bitmap}};
            },
            [](const PrepareMsg& m) {
                return Json{{"config_id", m.config_id}, {"ballot", m.ballot}};
            },
            [](const PromiseMsg& m) {
                Json b{{"config_id", m.config_id},
                       {"ballot", m.ballot},
                       {"accepted_ballot", m.accepted_ballot},
                       {"acceptor_index", m.acceptor_index}};
                if (m.accepted) b["accepted"] = *m.accepted;
                if (m.fast_vote) b["fast_vote"] = *m.fast_vote;
                return b;
            },
            [](const RejectMsg& m) {
                return Json{{"config_id", m.config_id},
                            {"ballot", m.ballot},
                            {"promised", m.promised}};
            },
            [](const AcceptMsg& m) {
                return Json{{"config_id", m.config_id},
                            {"ballot", m.ballot},
                            {"proposal", m.proposal}};
            },
            [](const LearnMsg& m) {
                return Json{{"config_id", m.config_id},
                            {"ballot", m.ballot},
                            {"proposal", m.proposal},
                            {"acceptor_index", m.acceptor_index},
                            {"decided", m.decided}};
            },
            [](const JoinReqMsg& m) { return Json{{"joiner", m.joiner}}; },
            [](const JoinRespMsg& m) {
                return Json{{"status", join_status_str(m.status)}, {"config", m.config}};
            },
            [](const JoinPhase2Msg& m) {
                return Json{{"joiner", m.joiner}, {"config_id", m.config_id}};
            },
            [](const ConfigReqMsg& m) { return Json{{"have", m.have}}; },
            [](const ConfigRespMsg& m) { return Json{{"config", m.config}}; },
            [](const LeaveMsg& m) {
                return Json{{"leaver", m.leaver}, {"config_id", m.config_id}};
            }},
        body);
    j["type"] = message_type(body);
    return j;
}

MessageBody body_from_json(const Json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "probe")
        return ProbeMsg{j.at("config_id").get<ConfigurationId>(), j.at("nonce").get<uint64_t>()};
    if (type == "probe_ack")
        return ProbeAckMsg{j.at("config_id").get<ConfigurationId>(),
                           j.at("nonce").get<uint64_t>()};
    if (type == "alert_batch") return AlertBatchMsg{j.at("alerts").get<std::vector<Alert>>()};
    if (type == "fast_vote")
        return FastVoteMsg{j.at("config_id").get<ConfigurationId>(),
                           j.at("proposal").get<CutProposal>(), j.at("bitmap").get<Bitmap>()};
    if (type == "prepare")
        return PrepareMsg{j.at("config_id").get<ConfigurationId>(), j.at("ballot").get<Ballot>()};
    if (type == "promise")
        return PromiseMsg{j.at("config_id").get<ConfigurationId>(),
                          j.at("ballot").get<Ballot>(),
                          j.at("accepted_ballot").get<Ballot>(),
                          opt_proposal(j, "accepted"),
                          opt_proposal(j, "fast_vote"),
                          j.at("acceptor_index").get<int32_t>()};
    if (type == "reject")
        return RejectMsg{j.at("config_id").get<ConfigurationId>(), j.at("ballot").get<Ballot>(),
                         j.at("promised").get<Ballot>()};
    if (type == "accept")
        return AcceptMsg{j.at("config_id").get<ConfigurationId>(), j.at("ballot").get<Ballot>(),
                         j.at("proposal").get<CutProposal>()};
    if (type == "learn")
        return LearnMsg{j.at("config_id").get<ConfigurationId>(), j.at("ballot").get<Ballot>(),
                        j.at("proposal").get<CutProposal>(),
                        j.at("acceptor_index").get<int32_t>(), j.at("decided").get<bool>()};
    if (type == "join_req") return JoinReqMsg{j.at("joiner").get<Member>()};
    if (type == "join_resp")
        return JoinRespMsg{parse_join_status(j.at("status").get<std::string>()),
                           j.at("config").get<Configuration>()};
    if (type == "join_phase2")
        return JoinPhase2Msg{j.at("joiner").get<Member>(),
                             j.at("config_id").get<ConfigurationId>()};
    if (type == "config_req") return ConfigReqMsg{j.at("have").get<ConfigurationId>()};
    if (type == "config_resp") return ConfigRespMsg{j.at("config").get<Configuration>()};
    if (type == "leave")
        return LeaveMsg{j.at("leaver").get<NodeId>(), j.at("config_id").get<ConfigurationId>()};
    throw ProtocolError("unknown message type " + type);
}

}  // namespace

void to_json(Json& j, const Message& m) {
    j = Json{{"type", "message"}, {"src", m.src}, {"src_id", m.src_id},
             {"body", body_to_json(m.body)}};
    if (m.gossip) j["gossip"] = Json{{"origin", m.gossip->origin}, {"seq", m.gossip->seq}};
}

void from_json(const Json& j, Message& m) {
    m.src = j.at("src").get<Endpoint>();
    m.src_id = j.at("src_id").get<NodeId>();
    if (j.contains("gossip")) {
        const Json& g = j.at("gossip");
        m.gossip = GossipId{g.at("origin").get<NodeId>(), g.at("seq").get<uint64_t>()};
    } else {
        m.gossip.reset();
    }
    m.body = body_from_json(j.at("body"));
}

}  // namespace rapid
