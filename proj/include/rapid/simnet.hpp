#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <variant>
#include <vector>

#include "rapid/engine.hpp"
#include "rapid/messages.hpp"
#include "rapid/serde.hpp"

namespace rapid {

// --- scenario events ------------------------------------------------------

struct CrashEvent {
    std::vector<int> nodes;  // roster indices
    Tick tick = 0;
};
struct JoinWaveEvent {
    int count = 0;
    Tick tick = 0;
};
// Loss override on a set of nodes over [start, end).
struct LinkPatchEvent {
    std::vector<int> nodes;
    double drop_ingress = 0.0;
    double drop_egress = 0.0;
    Tick start = 0;
    Tick end = 0;
};
// Alternating ingress/egress blackout: ON for `period` ticks, OFF for
// `period`, starting at `start`, until `end`.
struct FlipFlopEvent {
    std::vector<int> nodes;
    Tick period = 20;
    double drop_ingress = 0.0;
    double drop_egress = 0.0;
    Tick start = 0;
    Tick end = 0;
};
// Two-sided partition: `minority` vs everyone else over [start, end).
struct PartitionEvent {
    std::vector<int> minority;
    Tick start = 0;
    Tick end = 0;
};

using ScenarioEvent =
    std::variant<CrashEvent, JoinWaveEvent, LinkPatchEvent, FlipFlopEvent, PartitionEvent>;

struct Scenario {
    int n = 0;  // initial members (bootstrap=true starts with 1 seed instead)
    ProtocolParams params;
    uint64_t seed = 1;
    Tick duration = 100;
    RunMode mode = RunMode::kDecentralized;
    int aux_count = 3;
    bool bootstrap = false;
    bool implicit_local_only = false;

    // default link model
    Tick delay_min = 1;
    Tick delay_max = 1;
    double drop_ingress = 0.0;
    double drop_egress = 0.0;

    std::vector<ScenarioEvent> events;

    void validate() const;
};

void to_json(Json& j, const Scenario& s);
void from_json(const Json& j, Scenario& s);

// --- run report -----------------------------------------------------------

struct RunReport {
    std::string timeseries_csv;  // "tick,node,size\n..."
    std::vector<std::tuple<Tick, int, size_t>> rows;
    // per-roster-node size sequence with consecutive duplicates collapsed
    std::vector<std::vector<size_t>> size_sequences;
    std::set<size_t> unique_sizes;
    // per-node sequence of installed configuration ids (hex)
    std::vector<std::vector<std::string>> decided_sequences;
    std::vector<int> crashed_nodes;
    std::vector<int> departed_nodes;
    uint64_t conflicts = 0;  // extra distinct proposals voted on, summed per config
    int classic_rounds = 0;
    std::map<std::string, uint64_t> message_counts;
    uint64_t delivered = 0;
    uint64_t dropped = 0;
    bool agreement_ok = true;

    Json summary() const;  // canonical summary object
    std::string summary_text() const;

    // true when no node's reported size changes at or after `tick`
    bool stable_after(Tick tick) const;
};

// Deterministic discrete-event runner. Same Scenario bytes => same RunReport
// bytes. Aborts with InvariantError on agreement/callback violations.
RunReport run(const Scenario& scenario);

// Scenario builders for the stock experiments.
Scenario crash_scenario(int n, const ProtocolParams& p, int failures, uint64_t seed,
                        Tick duration);
Scenario flipflop_scenario(int n, const ProtocolParams& p, int victims, uint64_t seed,
                           Tick duration);
Scenario egress_loss_scenario(int n, const ProtocolParams& p, int victims, double drop,
                              uint64_t seed, Tick duration);
Scenario partition_scenario(int n, const ProtocolParams& p, int minority, Tick heal_at,
                            uint64_t seed, Tick duration);
Scenario bootstrap_scenario(int n, const ProtocolParams& p, uint64_t seed, Tick duration);
// Randomized adversity mix for the agreement property: loss, partition and
// crash schedules drawn from `seed`.
Scenario random_adversity_scenario(uint64_t seed);

}  // namespace rapid
