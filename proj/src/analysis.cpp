#include "rapid/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "rapid/rng.hpp"
#include "rapid/topology.hpp"

namespace rapid {

// ------------------------------------------------------------------- sweep

const SweepCell& SweepResult::at(int h, int l, int f) const {
    for (const SweepCell& c : cells)
        if (c.h == h && c.l == l && c.f == f) return c;
    throw InvariantError("sweep cell not found");
}

double SweepResult::pooled_rate(int gap, int f) const {
    double sum = 0.0;
    int count = 0;
    for (const SweepCell& c : cells)
        if (c.h - c.l == gap && c.f == f) {
            sum += c.rate();
            ++count;
        }
    if (!count) throw InvariantError("no sweep cells with requested gap");
    return sum / count;
}

std::string SweepResult::csv() const {
    std::ostringstream out;
    out << "h,l,f,conflicts,trials,rate\n";
    for (const SweepCell& c : cells)
        out << c.h << ',' << c.l << ',' << c.f << ',' << c.conflicts << ',' << c.trials << ','
            << c.rate() << '\n';
    return out.str();
}

namespace {

struct AlertEntry {
    uint16_t subject;  // index into the failed set
    uint16_t bit;      // index into the subject's distinct observer list
};

// All per-repetition inputs that do not depend on (H, L).
struct RepInputs {
    std::vector<AlertEntry> alerts;      // K alerts per failed subject
    std::vector<int> distinct_observers;  // per failed subject
};

RepInputs build_rep_inputs(const KRingTopology& topo, const std::vector<NodeId>& ids,
                           const std::vector<uint32_t>& failed) {
    RepInputs in;
    in.alerts.reserve(failed.size() * static_cast<size_t>(topo.k()));
    in.distinct_observers.reserve(failed.size());
    for (size_t fi = 0; fi < failed.size(); ++fi) {
        const NodeId& s = ids[failed[fi]];
        auto distinct = topo.distinct_observers_of(s);
        in.distinct_observers.push_back(static_cast<int>(distinct.size()));
        for (const NodeId& o : topo.observers_of(s)) {
            auto it = std::lower_bound(distinct.begin(), distinct.end(), o);
            if (it == distinct.end() || !(*it == o)) continue;  // self-edge at tiny n
            in.alerts.push_back({static_cast<uint16_t>(fi),
                                 static_cast<uint16_t>(it - distinct.begin())});
        }
    }
    return in;
}

// Replays one delivery order against the tally automaton and reports whether
// the first proposal missed a failed subject. `order` is scratch space holding
// a pre-shuffled copy of the alert stream.
bool first_proposal_conflicts(const std::vector<AlertEntry>& order, int f, int h, int l,
                              const std::vector<int>& distinct_observers,
                              std::vector<uint64_t>& masks) {
    masks.assign(static_cast<size_t>(f), 0);
    int n_stable = 0;
    int n_mid = 0;
    for (const AlertEntry& a : order) {
        uint64_t bit = uint64_t{1} << a.bit;
        uint64_t& m = masks[a.subject];
        if (m & bit) continue;
        m |= bit;
        int tally = std::popcount(m);
        int h_eff = std::min(h, distinct_observers[a.subject]);
        int l_eff = std::min(l, h_eff);
        if (tally == h_eff) {
            ++n_stable;
            if (l_eff < h_eff) --n_mid;  // was sitting in [l_eff, h_eff)
        } else if (tally == l_eff) {     // implies l_eff < h_eff
            ++n_mid;
        }
        if (n_stable > 0 && n_mid == 0) return n_stable < f;
    }
    throw InvariantError("alert stream exhausted without a proposal");
}

}  // namespace

SweepResult sensitivity_sweep(int n, int k, const std::vector<int>& h_set,
                              const std::vector<int>& l_set, const std::vector<int>& f_set,
                              int reps, uint64_t seed, [[maybe_unused]] bool parallel) {
    if (n < 2 || k < 1 || reps < 1) throw InvariantError("bad sweep arguments");
    for (int h : h_set)
        for (int l : l_set)
            ProtocolParams{k, h, l}.validate();
    for (int f : f_set)
        if (f < 1 || f > n) throw InvariantError("failure count must be in [1, n]");

    SweepResult result;
    result.n = n;
    result.k = k;
    result.reps = reps;
    result.seed = seed;
    for (int h : h_set)
        for (int l : l_set)
            for (int f : f_set) result.cells.push_back({h, l, f, 0, 0});

    const size_t cell_count = result.cells.size();
    std::vector<uint64_t> conflicts(cell_count, 0);

#pragma omp parallel for schedule(dynamic) if (parallel)
    for (int rep = 0; rep < reps; ++rep) {
        SplitMix64 idrng(mix64(seed, 0x53574545ull, static_cast<uint64_t>(rep)));
        std::vector<NodeId> ids(static_cast<size_t>(n));
        for (auto& id : ids) id = NodeId::from_rng(idrng);
        std::sort(ids.begin(), ids.end());
        KRingTopology topo(ConfigurationId{mix64(seed, static_cast<uint64_t>(rep))}, ids, k);

        std::vector<uint64_t> local(cell_count, 0);
        std::vector<AlertEntry> order;
        std::vector<uint64_t> masks;
        for (size_t f_idx = 0; f_idx < f_set.size(); ++f_idx) {
            int f = f_set[f_idx];
            SplitMix64 frng(
                mix64(seed, 0x4641494cull, static_cast<uint64_t>(rep), static_cast<uint64_t>(f)));
            std::vector<uint32_t> all(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) all[i] = static_cast<uint32_t>(i);
            for (int i = 0; i < f; ++i) {
                size_t j = i + static_cast<size_t>(frng.next_below(static_cast<uint64_t>(n - i)));
                std::swap(all[i], all[j]);
            }
            all.resize(static_cast<size_t>(f));
            RepInputs in = build_rep_inputs(topo, ids, all);

            for (int p = 0; p < n; ++p) {
                // one delivery order per (rep, f, process), shared by all (H, L)
                SplitMix64 prng(mix64(seed, 0x50524f43ull,
                                      mix64(static_cast<uint64_t>(rep), static_cast<uint64_t>(f)),
                                      static_cast<uint64_t>(p)));
                order = in.alerts;
                for (size_t i = 0; i + 1 < order.size(); ++i) {
                    size_t j = i + static_cast<size_t>(prng.next_below(order.size() - i));
                    std::swap(order[i], order[j]);
                }
                size_t cell = f_idx;
                for (size_t hi = 0; hi < h_set.size(); ++hi)
                    for (size_t li = 0; li < l_set.size(); ++li) {
                        if (first_proposal_conflicts(order, f, h_set[hi], l_set[li],
                                                     in.distinct_observers, masks))
                            ++local[cell];
                        cell += f_set.size();
                    }
            }
        }
#pragma omp critical
        for (size_t c = 0; c < cell_count; ++c) conflicts[c] += local[c];
    }

    for (size_t c = 0; c < cell_count; ++c) {
        result.cells[c].conflicts = conflicts[c];
        result.cells[c].trials = static_cast<uint64_t>(n) * static_cast<uint64_t>(reps);
    }
    return result;
}

// ------------------------------------------------------------------- bound

double binary_entropy(double p) {
    if (p <= 0.0 || p >= 1.0) throw InvariantError("binary entropy needs p in (0,1)");
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double conflict_bound(int k, double delta, int t) {
    if (k < 1 || t < 2) throw InvariantError("conflict bound needs k >= 1, t >= 2");
    if (!(delta > 0.0 && delta < 0.5)) throw InvariantError("delta must be in (0, 1/2)");
    double pairs = 0.5 * t * (t - 1.0);
    return pairs * std::pow(2.0, -2.0 * (1.0 - binary_entropy(delta)) * k);
}

// ------------------------------------------------------------------- monte carlo

double McEstimate::sigma() const {
    if (!samples) return 0.0;
    double r = rate();
    return std::sqrt(r * (1.0 - r) / static_cast<double>(samples));
}

McEstimate mc_conflict_rate(int k, int l, int h, int t, uint64_t samples, uint64_t seed) {
    if (!(1 <= l && l <= h && h <= k)) throw InvariantError("mc thresholds violate 1<=L<=H<=K");
    if (t < 2) throw InvariantError("mc needs t >= 2 subjects");
    McEstimate est;
    est.samples = samples;
    SplitMix64 rng(mix64(seed, 0x4d43ull, static_cast<uint64_t>(k),
                         mix64(static_cast<uint64_t>(l), static_cast<uint64_t>(h),
                               static_cast<uint64_t>(t))));
    std::vector<uint16_t> stream(static_cast<size_t>(k) * t);
    std::vector<int> tally(static_cast<size_t>(t));
    for (uint64_t s = 0; s < samples; ++s) {
        size_t idx = 0;
        for (int subject = 0; subject < t; ++subject)
            for (int i = 0; i < k; ++i) stream[idx++] = static_cast<uint16_t>(subject);
        for (size_t i = 0; i + 1 < stream.size(); ++i) {
            size_t j = i + static_cast<size_t>(rng.next_below(stream.size() - i));
            std::swap(stream[i], stream[j]);
        }
        std::fill(tally.begin(), tally.end(), 0);
        int n_high = 0;
        int n_mid = 0;
        for (uint16_t subject : stream) {
            int v = ++tally[subject];
            if (v == h) {
                ++n_high;
                if (h > l) --n_mid;
            } else if (v == l && l < h) {
                ++n_mid;
            }
            if (n_high > 0 && n_high < t && n_mid == 0) {
                ++est.hits;
                break;
            }
        }
    }
    return est;
}

McEstimate mc_conflict_rate_for_delta(int k, double delta, int t, uint64_t samples,
                                      uint64_t seed) {
    int l = static_cast<int>(std::lround(delta * k));
    int h = k - l;
    return mc_conflict_rate(k, l, h, t, samples, seed);
}

}  // namespace rapid
