#include "rapid/topology.hpp"

#include <algorithm>
#include <cmath>

namespace rapid {

KRingTopology::KRingTopology(ConfigurationId config_id, const std::vector<NodeId>& members,
                             int k)
    : config_id_(config_id), k_(k), ids_(members) {
    if (ids_.empty()) throw InvariantError("topology over empty membership");
    if (k_ < 1) throw InvariantError("topology needs K >= 1");
    if (!std::is_sorted(ids_.begin(), ids_.end()))
        std::sort(ids_.begin(), ids_.end());

    const size_t n = ids_.size();
    rings_.resize(k_);
    pos_.resize(k_);
    std::vector<std::pair<uint64_t, uint32_t>> keyed(n);
    for (int r = 0; r < k_; ++r) {
        for (uint32_t i = 0; i < n; ++i)
            keyed[i] = {mix64(kRingSalt, static_cast<uint64_t>(r), ids_[i].hi, ids_[i].lo), i};
        std::sort(keyed.begin(), keyed.end());
        rings_[r].resize(n);
        pos_[r].resize(n);
        for (uint32_t p = 0; p < n; ++p) {
            rings_[r][p] = keyed[p].second;
            pos_[r][keyed[p].second] = p;
        }
    }
}

size_t KRingTopology::index_of(const NodeId& id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id)
        throw ProtocolError("unknown node " + id.str() + " in topology " + config_id_.str());
    return static_cast<size_t>(it - ids_.begin());
}

std::vector<NodeId> KRingTopology::observers_of(const NodeId& s) const {
    const uint32_t i = static_cast<uint32_t>(index_of(s));
    const uint32_t n = static_cast<uint32_t>(ids_.size());
    std::vector<NodeId> out;
    out.reserve(k_);
    for (int r = 0; r < k_; ++r)
        out.push_back(ids_[rings_[r][(pos_[r][i] + n - 1) % n]]);
    return out;
}

std::vector<NodeId> KRingTopology::subjects_of(const NodeId& o) const {
    const uint32_t i = static_cast<uint32_t>(index_of(o));
    const uint32_t n = static_cast<uint32_t>(ids_.size());
    std::vector<NodeId> out;
    out.reserve(k_);
    for (int r = 0; r < k_; ++r)
        out.push_back(ids_[rings_[r][(pos_[r][i] + 1) % n]]);
    return out;
}

static std::vector<NodeId> distinct_without_self(std::vector<NodeId> v, const NodeId& self) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    v.erase(std::remove(v.begin(), v.end(), self), v.end());
    return v;
}

std::vector<NodeId> KRingTopology::distinct_observers_of(const NodeId& s) const {
    return distinct_without_self(observers_of(s), s);
}

std::vector<NodeId> KRingTopology::distinct_subjects_of(const NodeId& o) const {
    return distinct_without_self(subjects_of(o), o);
}

std::vector<std::pair<uint32_t, uint32_t>> KRingTopology::directed_edges() const {
    const uint32_t n = static_cast<uint32_t>(ids_.size());
    std::vector<std::pair<uint32_t, uint32_t>> edges;
    edges.reserve(static_cast<size_t>(k_) * n);
    for (int r = 0; r < k_; ++r)
        for (uint32_t p = 0; p < n; ++p)
            edges.emplace_back(rings_[r][p], rings_[r][(p + 1) % n]);
    return edges;
}

std::vector<NodeId> temporary_observers(const Configuration& cfg, const NodeId& joiner) {
    if (cfg.contains(joiner))
        throw ProtocolError("temporary observers requested for existing member");
    const size_t n = cfg.members.size();
    std::vector<std::pair<uint64_t, NodeId>> ranked;
    ranked.reserve(n);
    for (const auto& m : cfg.members)
        ranked.emplace_back(
            mix64(kTempObserverSalt ^ cfg.id.value, mix64(joiner.hi, joiner.lo), m.id.hi,
                  m.id.lo),
            m.id);
    std::sort(ranked.begin(), ranked.end());
    const size_t k = static_cast<size_t>(cfg.params.k);
    std::vector<NodeId> out(k);
    for (size_t i = 0; i < k; ++i) out[i] = ranked[i % n].second;
    return out;
}

SpectralReport spectral_gap(const KRingTopology& t, double tol, int max_iter) {
    const size_t n = t.size();
    if (n < 3) throw InvariantError("spectral_gap requires n >= 3");
    const double d = 2.0 * t.k();
    const auto edges = t.directed_edges();

    // Power iteration on B = A + A^T + dI. B is symmetric positive
    // semidefinite with top eigenpair (2d, all-ones); deflating the ones
    // vector leaves d + lambda2 as the dominant eigenvalue.
    std::vector<double> v(n), w(n);
    SplitMix64 rng(mix64(t.config_id().value, 0x53504543ull));  // "SPEC"
    for (auto& x : v) x = rng.next_unit() - 0.5;

    auto deflate = [&](std::vector<double>& u) {
        double mean = 0;
        for (double x : u) mean += x;
        mean /= static_cast<double>(n);
        for (double& x : u) x -= mean;
    };
    auto norm = [&](const std::vector<double>& u) {
        double s = 0;
        for (double x : u) s += x * x;
        return std::sqrt(s);
    };

    deflate(v);
    double nv = norm(v);
    if (nv == 0) {  // pathological start, perturb
        v[0] = 1;
        deflate(v);
        nv = norm(v);
    }
    for (auto& x : v) x /= nv;

    double mu = 0, residual = 0;
    int it = 0;
    for (it = 1; it <= max_iter; ++it) {
        std::fill(w.begin(), w.end(), 0.0);
        for (const auto& [a, b] : edges) {
            w[b] += v[a];
            w[a] += v[b];
        }
        for (size_t i = 0; i < n; ++i) w[i] += d * v[i];
        deflate(w);

        mu = 0;
        for (size_t i = 0; i < n; ++i) mu += v[i] * w[i];  // Rayleigh quotient of B
        residual = 0;
        for (size_t i = 0; i < n; ++i) {
            double r = w[i] - mu * v[i];
            residual += r * r;
        }
        residual = std::sqrt(residual);

        double nw = norm(w);
        if (nw == 0) break;  // v in the kernel of deflated B; mu stays 0
        for (size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
        if (residual <= tol) break;
    }

    SpectralReport rep;
    rep.n = n;
    rep.d = 2 * t.k();
    rep.lambda2 = mu - d;
    rep.ratio = rep.lambda2 / d;
    rep.iterations = std::min(it, max_iter);
    rep.residual = residual;
    return rep;
}

double detectability_margin(size_t n, size_t f, const ProtocolParams& params, double ratio) {
    if (n == 0 || f >= n) throw InvariantError("detectability_margin requires 0 <= f < n");
    const double l_over_k = static_cast<double>(params.l) / params.k;
    return (1.0 - l_over_k - ratio) - static_cast<double>(f) / static_cast<double>(n);
}

}  // namespace rapid
