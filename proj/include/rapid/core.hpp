#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rapid/rng.hpp"

namespace rapid {

// Logical time. All protocol timeouts are expressed in ticks; the simulator
// advances ticks, the loopback transport maps one tick to a fixed wall-clock
// period.
using Tick = int64_t;

class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

// host:port listen address of a process.
struct Endpoint {
    std::string host;
    uint16_t port = 0;

    Endpoint() = default;
    Endpoint(std::string h, uint16_t p) : host(std::move(h)), port(p) { validate(); }

    void validate() const {
        if (host.empty()) throw InvariantError("endpoint host empty");
        if (port == 0) throw InvariantError("endpoint port out of range");
    }

    auto operator<=>(const Endpoint&) const = default;
    std::string str() const { return host + ":" + std::to_string(port); }
};

// 128-bit logical identifier, unique per join attempt. A process that
// rejoins gets a fresh id.
struct NodeId {
    uint64_t hi = 0;
    uint64_t lo = 0;

    auto operator<=>(const NodeId&) const = default;

    bool is_nil() const { return hi == 0 && lo == 0; }
    uint64_t hash() const { return mix64(hi, lo); }
    std::string str() const;

    static NodeId from_rng(SplitMix64& rng) { return NodeId{rng.next(), rng.next()}; }
    // system entropy source, for real deployments
    static NodeId generate();
    static std::optional<NodeId> parse(const std::string& hex);
};

struct Member {
    NodeId id;
    Endpoint endpoint;
    std::map<std::string, std::string> metadata;

    bool operator==(const Member& o) const {
        return id == o.id && endpoint == o.endpoint && metadata == o.metadata;
    }
};

struct ConfigurationId {
    uint64_t value = 0;
    auto operator<=>(const ConfigurationId&) const = default;
    std::string str() const;
    static std::optional<ConfigurationId> parse(const std::string& hex);
};

// num/den failure fraction for the default edge detector, kept exact so the
// verdict is an integer comparison.
struct Fraction {
    uint32_t num = 0;
    uint32_t den = 1;

    auto operator<=>(const Fraction&) const = default;
    double value() const { return static_cast<double>(num) / den; }
};

struct ProtocolParams {
    int k = 10;                       // rings / observers per subject
    int h = 9;                        // high watermark
    int l = 3;                        // low watermark
    Tick reinforcement_timeout = 10;
    Tick fast_round_timeout = 20;
    Tick batching_window = 1;
    int consecutive_probe_window = 10;
    Fraction probe_failure_fraction{2, 5};

    void validate() const {
        if (!(1 <= l && l <= h && h <= k))
            throw InvariantError("protocol params violate 1 <= L <= H <= K");
        if (reinforcement_timeout <= 0 || fast_round_timeout <= 0 || batching_window <= 0)
            throw InvariantError("protocol timeouts must be positive");
        if (consecutive_probe_window <= 0)
            throw InvariantError("probe window must be positive");
        if (probe_failure_fraction.num == 0 ||
            probe_failure_fraction.num > probe_failure_fraction.den)
            throw InvariantError("probe failure fraction must be in (0, 1]");
    }

    bool operator==(const ProtocolParams&) const = default;
};

// Identified membership list; the unit over which one view-change decision
// is made. Members are kept sorted by NodeId.
struct Configuration {
    ConfigurationId id;
    std::vector<Member> members;
    ProtocolParams params;

    size_t size() const { return members.size(); }
    bool contains(const NodeId& n) const { return find(n) != nullptr; }
    const Member* find(const NodeId& n) const;
    // index into the sorted member list, used as the vote-bitmap position
    std::optional<size_t> index_of(const NodeId& n) const;

    void check_invariants() const;
};

enum class AlertKind { kRemove, kJoin };

const char* to_string(AlertKind k);

// Irrevocable edge report broadcast by an observer about a subject.
// REMOVE subjects are members of the configuration named by config_id;
// JOIN subjects are non-members and carry the full joiner identity.
struct Alert {
    NodeId observer;
    NodeId subject;
    AlertKind kind = AlertKind::kRemove;
    ConfigurationId config_id;
    int ring_index = 0;
    // populated for JOIN alerts only
    std::optional<Member> joiner;

    bool operator==(const Alert&) const = default;
};

// A multi-process configuration-change proposal: everything to remove and
// add in one transition. Canonically ordered so equal cuts serialize and
// hash identically.
struct CutProposal {
    ConfigurationId config_id;
    std::vector<NodeId> removals;  // sorted, unique
    std::vector<Member> joins;     // sorted by NodeId, unique

    void canonicalize();
    bool empty() const { return removals.empty() && joins.empty(); }
    bool operator==(const CutProposal&) const = default;

    // 64-bit digest of the canonical serialization; the full proposal always
    // travels alongside the hash, collisions are detected as protocol errors
    uint64_t digest() const;
};

// Stable 64-bit FNV-1a chain hash of (previous id, sorted member ids).
// Pure function; the identity of a configuration is its membership history.
ConfigurationId derive_config_id(ConfigurationId prev, const std::vector<NodeId>& members);

// (cfg.members \ removals) u joins, re-sorted, with the id advanced through
// derive_config_id and params carried over.
Configuration apply_cut(const Configuration& cfg, const CutProposal& cut);

std::vector<NodeId> member_ids(const Configuration& cfg);

}  // namespace rapid
