#include "rapid/core.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

namespace rapid {

namespace {

std::string u64_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::optional<uint64_t> parse_u64_hex(const std::string& s) {
    if (s.empty() || s.size() > 16) return std::nullopt;
    uint64_t v = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
        else return std::nullopt;
        v = (v << 4) | static_cast<uint64_t>(d);
    }
    return v;
}

}  // namespace

std::string NodeId::str() const { return u64_hex(hi) + u64_hex(lo); }

NodeId NodeId::generate() {
    std::random_device rd;
    auto word = [&] {
        return (static_cast<uint64_t>(rd()) << 32) ^ static_cast<uint64_t>(rd());
    };
    NodeId id{word(), word()};
    if (id.is_nil()) id.lo = 1;
    return id;
}

std::optional<NodeId> NodeId::parse(const std::string& hex) {
    if (hex.size() != 32) return std::nullopt;
    auto hi = parse_u64_hex(hex.substr(0, 16));
    auto lo = parse_u64_hex(hex.substr(16));
    if (!hi || !lo) return std::nullopt;
    return NodeId{*hi, *lo};
}

std::string ConfigurationId::str() const { return u64_hex(value); }

std::optional<ConfigurationId> ConfigurationId::parse(const std::string& hex) {
    if (hex.size() != 16) return std::nullopt;
    auto v = parse_u64_hex(hex);
    if (!v) return std::nullopt;
    return ConfigurationId{*v};
}

const char* to_string(AlertKind k) {
    return k == AlertKind::kRemove ? "REMOVE" : "JOIN";
}

const Member* Configuration::find(const NodeId& n) const {
    auto it = std::lower_bound(members.begin(), members.end(), n,
                               [](const Member& m, const NodeId& id) { return m.id < id; });
    if (it != members.end() && it->id == n) return &*it;
    return nullptr;
}

std::optional<size_t> Configuration::index_of(const NodeId& n) const {
    auto it = std::lower_bound(members.begin(), members.end(), n,
                               [](const Member& m, const NodeId& id) { return m.id < id; });
    if (it != members.end() && it->id == n)
        return static_cast<size_t>(it - members.begin());
    return std::nullopt;
}

void Configuration::check_invariants() const {
    if (members.empty()) throw InvariantError("configuration has no members");
    params.validate();
    std::set<Endpoint> eps;
    for (size_t i = 0; i < members.size(); ++i) {
        members[i].endpoint.validate();
        if (i > 0 && !(members[i - 1].id < members[i].id))
            throw InvariantError("members not sorted / duplicate NodeId");
        if (!eps.insert(members[i].endpoint).second)
            throw InvariantError("duplicate endpoint in configuration");
    }
}

void CutProposal::canonicalize() {
    std::sort(removals.begin(), removals.end());
    removals.erase(std::unique(removals.begin(), removals.end()), removals.end());
    std::sort(joins.begin(), joins.end(),
              [](const Member& a, const Member& b) { return a.id < b.id; });
    joins.erase(std::unique(joins.begin(), joins.end(),
                            [](const Member& a, const Member& b) { return a.id == b.id; }),
                joins.end());
}

uint64_t CutProposal::digest() const {
    uint64_t h = kFnvOffset;
    h = fnv1a64_u64(config_id.value, h);
    for (const auto& r : removals) {
        h = fnv1a64_u64(r.hi, h);
        h = fnv1a64_u64(r.lo, h);
    }
    h = fnv1a64_u64(0x6a6f696e73ull, h);  // removals/joins separator
    for (const auto& j : joins) {
        h = fnv1a64_u64(j.id.hi, h);
        h = fnv1a64_u64(j.id.lo, h);
        h = fnv1a64_str(j.endpoint.host.data(), j.endpoint.host.size(), h);
        h = fnv1a64_u64(j.endpoint.port, h);
    }
    return h;
}

ConfigurationId derive_config_id(ConfigurationId prev, const std::vector<NodeId>& members) {
    if (members.empty()) throw InvariantError("derive_config_id: empty member list");
    uint64_t h = kFnvOffset;
    h = fnv1a64_u64(prev.value, h);
    for (const auto& m : members) {
        h = fnv1a64_u64(m.hi, h);
        h = fnv1a64_u64(m.lo, h);
    }
    return ConfigurationId{h};
}

std::vector<NodeId> member_ids(const Configuration& cfg) {
    std::vector<NodeId> ids;
    ids.reserve(cfg.members.size());
    for (const auto& m : cfg.members) ids.push_back(m.id);
    return ids;
}

Configuration apply_cut(const Configuration& cfg, const CutProposal& cut) {
    if (cut.config_id != cfg.id)
        throw ProtocolError("apply_cut: stale proposal for configuration " +
                            cut.config_id.str() + " against " + cfg.id.str());
    if (cut.empty()) throw InvariantError("apply_cut: empty cut");

    for (const auto& r : cut.removals)
        if (!cfg.contains(r))
            throw InvariantError("apply_cut: removal of non-member " + r.str());
    for (const auto& j : cut.joins)
        if (cfg.contains(j.id))
            throw InvariantError("apply_cut: join of existing member " + j.id.str());

    Configuration next;
    next.params = cfg.params;
    next.members.reserve(cfg.members.size() - cut.removals.size() + cut.joins.size());
    for (const auto& m : cfg.members) {
        if (!std::binary_search(cut.removals.begin(), cut.removals.end(), m.id))
            next.members.push_back(m);
    }
    next.members.insert(next.members.end(), cut.joins.begin(), cut.joins.end());
    std::sort(next.members.begin(), next.members.end(),
              [](const Member& a, const Member& b) { return a.id < b.id; });
    next.id = derive_config_id(cfg.id, member_ids(next));
    next.check_invariants();
    return next;
}

}  // namespace rapid
