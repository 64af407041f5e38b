#pragma once

#include <string>
#include <vector>

#include "rapid/core.hpp"

namespace rapid {

// --- watermark sensitivity sweep -------------------------------------------

// One (H, L, F) grid cell: `conflicts` out of `trials` process-runs announced
// a first proposal that missed at least one failed process.
struct SweepCell {
    int h = 0;
    int l = 0;
    int f = 0;
    uint64_t conflicts = 0;
    uint64_t trials = 0;

    double rate() const { return trials ? static_cast<double>(conflicts) / trials : 0.0; }
};

struct SweepResult {
    int n = 0;
    int k = 0;
    int reps = 0;
    uint64_t seed = 0;
    std::vector<SweepCell> cells;  // h-major, then l, then f

    const SweepCell& at(int h, int l, int f) const;
    // mean rate over cells with h - l == gap at fixed f
    double pooled_rate(int gap, int f) const;
    std::string csv() const;  // "h,l,f,conflicts,trials,rate\n..."
};

// Conflict-rate study: n processes, f random failures, the k alerts from each
// failed process' ring observers delivered to every process in an independent
// uniform random order; a process' first proposal that omits a failed process
// counts as one conflict. Delivery orders are shared across (H, L) cells of a
// given (rep, f, process) triple so gap comparisons use common random numbers.
// `parallel` fans the repetitions out across OpenMP threads when available;
// results are identical to the serial path for any thread count.
SweepResult sensitivity_sweep(int n, int k, const std::vector<int>& h_set,
                              const std::vector<int>& l_set, const std::vector<int>& f_set,
                              int reps, uint64_t seed, bool parallel = true);

// --- analytic conflict bound ------------------------------------------------

// Binary entropy, bits.
double binary_entropy(double p);

// Upper bound on the probability that any of the C(t,2) ordered interleavings
// of two subjects' alert tallies lets one subject look stable while another
// still looks like noise: C(t,2) * 2^(-2 (1 - H2(delta)) k), with
// L = delta*k and H = (1-delta)*k. Requires 0 < delta < 1/2.
double conflict_bound(int k, double delta, int t);

// --- Monte Carlo check of the bound -----------------------------------------

struct McEstimate {
    uint64_t hits = 0;
    uint64_t samples = 0;

    double rate() const { return samples ? static_cast<double>(hits) / samples : 0.0; }
    double sigma() const;  // binomial std error of rate()
};

// Estimates the premature-proposal probability the bound dominates: t failed
// subjects, k distinct observer alerts each, all t*k alerts shuffled uniformly;
// a hit is any prefix at which >= 1 subject reached tally >= h, none sits in
// [l, h), and some subject is still below l.
McEstimate mc_conflict_rate(int k, int l, int h, int t, uint64_t samples, uint64_t seed);

// Same, parameterized like the bound: l = round(delta*k), h = k - l.
McEstimate mc_conflict_rate_for_delta(int k, double delta, int t, uint64_t samples,
                                      uint64_t seed);

}  // namespace rapid
