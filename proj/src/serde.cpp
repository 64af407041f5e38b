#include "rapid/serde.hpp"

namespace rapid {

namespace {

template <typename T>
T parse_hex_field(const Json& j, const char* what) {
    auto v = T::parse(j.get<std::string>());
    if (!v) throw ProtocolError(std::string("bad ") + what + " encoding");
    return *v;
}

}  // namespace

void to_json(Json& j, const Endpoint& e) {
    j = Json{{"host", e.host}, {"port", e.port}};
}

void from_json(const Json& j, Endpoint& e) {
    e.host = j.at("host").get<std::string>();
    int port = j.at("port").get<int>();
    if (port < 1 || port > 65535) throw ProtocolError("endpoint port out of range");
    e.port = static_cast<uint16_t>(port);
    e.validate();
}

void to_json(Json& j, const NodeId& id) { j = id.str(); }

void from_json(const Json& j, NodeId& id) { id = parse_hex_field<NodeId>(j, "node id"); }

void to_json(Json& j, const ConfigurationId& id) { j = id.str(); }

void from_json(const Json& j, ConfigurationId& id) {
    id = parse_hex_field<ConfigurationId>(j, "configuration id");
}

void to_json(Json& j, const Fraction& f) { j = Json::array({f.num, f.den}); }

void from_json(const Json& j, Fraction& f) {
    f.num = j.at(0).get<uint32_t>();
    f.den = j.at(1).get<uint32_t>();
    if (f.den == 0) throw ProtocolError("fraction with zero denominator");
}

void to_json(Json& j, const Member& m) {
    j = Json{{"endpoint", m.endpoint}, {"id", m.id}, {"metadata", m.metadata}};
}

void from_json(const Json& j, Member& m) {
    m.id = j.at("id").get<NodeId>();
    m.endpoint = j.at("endpoint").get<Endpoint>();
    m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
}

void to_json(Json& j, const ProtocolParams& p) {
    j = Json{{"K", p.k},
             {"H", p.h},
             {"L", p.l},
             {"reinforcement_timeout", p.reinforcement_timeout},
             {"fast_round_timeout", p.fast_round_timeout},
             {"batching_window", p.batching_window},
             {"consecutive_probe_window", p.consecutive_probe_window},
             {"probe_failure_fraction", p.probe_failure_fraction}};
}

void from_json(const Json& j, ProtocolParams& p) {
    p.k = j.at("K").get<int>();
    p.h = j.at("H").get<int>();
    p.l = j.at("L").get<int>();
    p.reinforcement_timeout = j.at("reinforcement_timeout").get<Tick>();
    p.fast_round_timeout = j.at("fast_round_timeout").get<Tick>();
    p.batching_window = j.at("batching_window").get<Tick>();
    p.consecutive_probe_window = j.at("consecutive_probe_window").get<int>();
    p.probe_failure_fraction = j.at("probe_failure_fraction").get<Fraction>();
    p.validate();
}

void to_json(Json& j, const Configuration& c) {
    j = Json{{"type", "configuration"},
             {"id", c.id},
             {"members", c.members},
             {"params", c.params}};
}

void from_json(const Json& j, Configuration& c) {
    c.id = j.at("id").get<ConfigurationId>();
    c.members = j.at("members").get<std::vector<Member>>();
    c.params = j.at("params").get<ProtocolParams>();
    c.check_invariants();
}

void to_json(Json& j, const Alert& a) {
    j = Json{{"type", "alert"},
             {"observer", a.observer},
             {"subject", a.subject},
             {"kind", a.kind == AlertKind::kRemove ? "REMOVE" : "JOIN"},
             {"config_id", a.config_id},
             {"ring_index", a.ring_index}};
    if (a.joiner) j["joiner"] = *a.joiner;
}

void from_json(const Json& j, Alert& a) {
    a.observer = j.at("observer").get<NodeId>();
    a.subject = j.at("subject").get<NodeId>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "REMOVE") a.kind = AlertKind::kRemove;
    else if (kind == "JOIN") a.kind = AlertKind::kJoin;
    else throw ProtocolError("unknown alert kind " + kind);
    a.config_id = j.at("config_id").get<ConfigurationId>();
    a.ring_index = j.at("ring_index").get<int>();
    if (j.contains("joiner")) a.joiner = j.at("joiner").get<Member>();
    if (a.kind == AlertKind::kJoin && !a.joiner)
        throw ProtocolError("JOIN alert without joiner identity");
}

void to_json(Json& j, const CutProposal& c) {
    j = Json{{"type", "cut_proposal"},
             {"config_id", c.config_id},
             {"removals", c.removals},
             {"joins", c.joins}};
}

void from_json(const Json& j, CutProposal& c) {
    c.config_id = j.at("config_id").get<ConfigurationId>();
    c.removals = j.at("removals").get<std::vector<NodeId>>();
    c.joins = j.at("joins").get<std::vector<Member>>();
    c.canonicalize();
}

std::string canonical_bytes(const Json& j) { return j.dump(); }

std::string frame(const Json& j) {
    std::string body = canonical_bytes(j);
    if (body.size() > kMaxFrameBytes) throw ProtocolError("frame too large");
    std::string out;
    out.reserve(body.size() + 4);
    uint32_t len = static_cast<uint32_t>(body.size());
    out.push_back(static_cast<char>((len >> 24) & 0xff));
    out.push_back(static_cast<char>((len >> 16) & 0xff));
    out.push_back(static_cast<char>((len >> 8) & 0xff));
    out.push_back(static_cast<char>(len & 0xff));
    out += body;
    return out;
}

std::optional<Json> unframe(const std::string& buf, size_t& offset) {
    if (buf.size() - offset < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + offset);
    uint32_t len = (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
                   (uint32_t(p[2]) << 8) | uint32_t(p[3]);
    if (len > kMaxFrameBytes) throw ProtocolError("oversized frame");
    if (buf.size() - offset - 4 < len) return std::nullopt;
    Json j = Json::parse(buf.substr(offset + 4, len), nullptr, /*allow_exceptions=*/true);
    offset += 4 + len;
    return j;
}

}  // namespace rapid
