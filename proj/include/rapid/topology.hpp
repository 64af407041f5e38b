#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rapid/core.hpp"

namespace rapid {

// Deterministic K-ring monitoring overlay. Ring r orders the membership by
// the per-ring hash key mix64(kRingSalt, r, id); every process derives the
// identical rings from the membership set alone, and a single join/removal
// only touches the changed process' 2K incident edges plus the K re-linked
// predecessor->successor edges.
//
// In each ring the predecessor of s is an observer of s and the successor of
// o is a subject of o. Duplicate edges across rings are allowed; self-edges
// occur only at n <= 2 (and n == 1) and are skipped by the monitoring engine
// but kept in the spectral multigraph to preserve 2K-regularity.
class KRingTopology {
public:
    KRingTopology(ConfigurationId config_id, const std::vector<NodeId>& members, int k);

    static KRingTopology build(const Configuration& cfg) {
        return KRingTopology(cfg.id, member_ids(cfg), cfg.params.k);
    }

    ConfigurationId config_id() const { return config_id_; }
    int k() const { return k_; }
    size_t size() const { return ids_.size(); }
    const std::vector<NodeId>& ids() const { return ids_; }

    // ring-r predecessors of s, one per ring, with multiplicity
    std::vector<NodeId> observers_of(const NodeId& s) const;
    // ring-r successors of o, one per ring, with multiplicity
    std::vector<NodeId> subjects_of(const NodeId& o) const;

    // sorted, de-duplicated observer set (excludes s itself)
    std::vector<NodeId> distinct_observers_of(const NodeId& s) const;
    std::vector<NodeId> distinct_subjects_of(const NodeId& o) const;

    // every directed monitoring edge (observer index, subject index), with
    // multiplicity; K*n entries
    std::vector<std::pair<uint32_t, uint32_t>> directed_edges() const;

    size_t index_of(const NodeId& id) const;  // throws on unknown id

private:
    ConfigurationId config_id_;
    int k_;
    std::vector<NodeId> ids_;              // sorted
    std::vector<std::vector<uint32_t>> rings_;  // rings_[r] = permutation of indices
    std::vector<std::vector<uint32_t>> pos_;    // pos_[r][i] = position of i in ring r
};

// K temporary observers for a joiner: members ranked by
// mix64(kTempObserverSalt, cfg.id, joiner, member), first K with wraparound
// when n < K. Stable for a fixed (cfg, joiner) pair.
std::vector<NodeId> temporary_observers(const Configuration& cfg, const NodeId& joiner);

struct SpectralReport {
    size_t n = 0;
    int d = 0;           // = 2K
    double lambda2 = 0;  // second eigenvalue of the monitoring multigraph
    double ratio = 0;    // lambda2 / d
    int iterations = 0;
    double residual = 0;
};

// Second adjacency eigenvalue of the 2K-regular monitoring multigraph
// (directed edges unioned with their reverses, multiplicities kept), by
// power iteration on A + A^T + dI with the all-ones eigenvector deflated.
// Non-convergence within max_iter is reported through the residual field,
// never hidden.
SpectralReport spectral_gap(const KRingTopology& t, double tol = 1e-9, int max_iter = 20000);

// (1 - L/K - ratio) - f/n; positive means the detectability condition holds
// for a faulty fraction f/n.
double detectability_margin(size_t n, size_t f, const ProtocolParams& params, double ratio);

// documented hash salts (docs/SCHEMA.md)
constexpr uint64_t kRingSalt = 0x4b52494e47ull;          // "KRING"
constexpr uint64_t kTempObserverSalt = 0x544d504f4253ull;  // "TMPOBS"

}  // namespace rapid
