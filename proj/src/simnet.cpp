#include "rapid/simnet.hpp"

#include <algorithm>
#include <sstream>

namespace rapid {

// ------------------------------------------------------------- scenario io

void Scenario::validate() const {
    if (n < 1) throw InvariantError("scenario needs n >= 1");
    params.validate();
    if (duration < 1) throw InvariantError("scenario duration must be positive");
    if (delay_min < 1 || delay_max < delay_min) throw InvariantError("bad delay range");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(drop_ingress) || !prob(drop_egress))
        throw InvariantError("loss probabilities must be in [0,1]");
    if (aux_count < 1) throw InvariantError("aux_count must be >= 1");
    for (const auto& ev : events)
        std::visit(
            [&](const auto& e) {
                using T = std::decay_t<decltype(e)>;
                if constexpr (std::is_same_v<T, CrashEvent>) {
                    if (e.tick < 0) throw InvariantError("crash tick negative");
                } else if constexpr (std::is_same_v<T, JoinWaveEvent>) {
                    if (e.count < 1 || e.tick < 0) throw InvariantError("bad join wave");
                } else if constexpr (std::is_same_v<T, LinkPatchEvent>) {
                    if (!prob(e.drop_ingress) || !prob(e.drop_egress) || e.end < e.start)
                        throw InvariantError("bad link patch");
                } else if constexpr (std::is_same_v<T, FlipFlopEvent>) {
                    if (!prob(e.drop_ingress) || !prob(e.drop_egress) || e.period < 1 ||
                        e.end < e.start)
                        throw InvariantError("bad flip-flop event");
                } else if constexpr (std::is_same_v<T, PartitionEvent>) {
                    if (e.end < e.start) throw InvariantError("bad partition window");
                }
            },
            ev);
}

namespace {

Json event_to_json(const ScenarioEvent& ev) {
    return std::visit(
        [](const auto& e) -> Json {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, CrashEvent>)
                return Json{{"type", "crash"}, {"nodes", e.nodes}, {"tick", e.tick}};
            else if constexpr (std::is_same_v<T, JoinWaveEvent>)
                return Json{{"type", "join_wave"}, {"count", e.count}, {"tick", e.tick}};
            else if constexpr (std::is_same_v<T, LinkPatchEvent>)
                return Json{{"type", "link"},           {"nodes", e.nodes},
                            {"drop_ingress", e.drop_ingress}, {"drop_egress", e.drop_egress},
                            {"start", e.start},         {"end", e.end}};
            else if constexpr (std::is_same_v<T, FlipFlopEvent>)
                return Json{{"type", "flip_flop"},      {"nodes", e.nodes},
                            {"period", e.period},       {"drop_ingress", e.drop_ingress},
                            {"drop_egress", e.drop_egress}, {"start", e.start},
                            {"end", e.end}};
            else
                return Json{{"type", "partition"},
                            {"minority", e.minority},
                            {"start", e.start},
                            {"end", e.end}};
        },
        ev);
}

ScenarioEvent event_from_json(const Json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "crash")
        return CrashEvent{j.at("nodes").get<std::vector<int>>(), j.at("tick").get<Tick>()};
    if (type == "join_wave")
        return JoinWaveEvent{j.at("count").get<int>(), j.at("tick").get<Tick>()};
    if (type == "link")
        return LinkPatchEvent{j.at("nodes").get<std::vector<int>>(),
                              j.at("drop_ingress").get<double>(),
                              j.at("drop_egress").get<double>(),
                              j.at("start").get<Tick>(),
                              j.at("end").get<Tick>()};
    if (type == "flip_flop")
        return FlipFlopEvent{j.at("nodes").get<std::vector<int>>(), j.at("period").get<Tick>(),
                             j.at("drop_ingress").get<double>(),
                             j.at("drop_egress").get<double>(),  j.at("start").get<Tick>(),
                             j.at("end").get<Tick>()};
    if (type == "partition")
        return PartitionEvent{j.at("minority").get<std::vector<int>>(),
                              j.at("start").get<Tick>(), j.at("end").get<Tick>()};
    throw ProtocolError("unknown scenario event type " + type);
}

}  // namespace

void to_json(Json& j, const Scenario& s) {
    Json events = Json::array();
    for (const auto& ev : s.events) events.push_back(event_to_json(ev));
    j = Json{{"schema", "rapid-scenario/v1"},
             {"n", s.n},
             {"params", s.params},
             {"seed", s.seed},
             {"duration", s.duration},
             {"mode", s.mode == RunMode::kCentralized ? "centralized" : "decentralized"},
             {"aux_count", s.aux_count},
             {"bootstrap", s.bootstrap},
             {"implicit_local_only", s.implicit_local_only},
             {"delay_min", s.delay_min},
             {"delay_max", s.delay_max},
             {"drop_ingress", s.drop_ingress},
             {"drop_egress", s.drop_egress},
             {"events", events}};
}

void from_json(const Json& j, Scenario& s) {
    if (j.value("schema", "") != "rapid-scenario/v1")
        throw ProtocolError("unsupported scenario schema");
    s.n = j.at("n").get<int>();
    s.params = j.at("params").get<ProtocolParams>();
    s.seed = j.at("seed").get<uint64_t>();
    s.duration = j.at("duration").get<Tick>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "centralized") s.mode = RunMode::kCentralized;
    else if (mode == "decentralized") s.mode = RunMode::kDecentralized;
    else throw ProtocolError("unknown mode " + mode);
    s.aux_count = j.at("aux_count").get<int>();
    s.bootstrap = j.at("bootstrap").get<bool>();
    s.implicit_local_only = j.at("implicit_local_only").get<bool>();
    s.delay_min = j.at("delay_min").get<Tick>();
    s.delay_max = j.at("delay_max").get<Tick>();
    s.drop_ingress = j.at("drop_ingress").get<double>();
    s.drop_egress = j.at("drop_egress").get<double>();
    s.events.clear();
    for (const Json& e : j.at("events")) s.events.push_back(event_from_json(e));
    s.validate();
}

// ------------------------------------------------------------- run report

Json RunReport::summary() const {
    return Json{{"schema", "rapid-runreport/v1"},
                {"agreement", agreement_ok ? "OK" : "VIOLATED"},
                {"classic_rounds", classic_rounds},
                {"conflicts", conflicts},
                {"crashed_nodes", crashed_nodes},
                {"decided", decided_sequences},
                {"delivered", delivered},
                {"departed_nodes", departed_nodes},
                {"dropped", dropped},
                {"message_counts", message_counts},
                {"size_sequences", size_sequences},
                {"unique_size_count", unique_sizes.size()},
                {"unique_sizes", std::vector<size_t>(unique_sizes.begin(), unique_sizes.end())}};
}

std::string RunReport::summary_text() const { return canonical_bytes(summary()); }

bool RunReport::stable_after(Tick tick) const {
    std::map<int, size_t> last;
    for (const auto& [t, node, size] : rows)
        if (t >= tick) {
            auto it = last.find(node);
            if (it == last.end()) last.emplace(node, size);
            else if (it->second != size) return false;
        }
    return true;
}

// ------------------------------------------------------------------ runner

namespace {

struct SimNode {
    Member member;
    std::unique_ptr<NodeRuntime> rt;
    bool crashed = false;
    std::vector<std::shared_ptr<const Message>> inbox;
};

struct Registry {
    std::map<uint64_t, CutProposal> cut_by_parent;
    std::map<uint64_t, uint64_t> successor;
    std::set<std::pair<int, uint64_t>> installs;
    std::map<uint64_t, std::set<uint64_t>> vote_digests;
};

class Runner {
public:
    explicit Runner(const Scenario& sc) : sc_(sc) {}

    RunReport run();

private:
    void build_initial();
    void spawn_joiners(int count);
    void apply_events(Tick t);
    void route(int src, const Outbound& out, Tick t);
    void deliver_tick(Tick t);
    double ingress_prob(int node, Tick t) const;
    double egress_prob(int node, Tick t) const;
    bool partitioned(int a, int b, Tick t) const;
    SplitMix64& pair_stream(int src, int dst);
    void record_install(int node, const ViewChangeEvent& ev);
    void check_chains() const;

    const Scenario& sc_;
    std::vector<SimNode> nodes_;
    std::map<Endpoint, int> by_endpoint_;
    std::map<std::pair<int, int>, SplitMix64> streams_;
    std::map<Tick, std::vector<std::pair<int, std::shared_ptr<const Message>>>> pending_;
    Registry reg_;
    RunReport report_;
    int join_waves_ = 0;
    uint64_t initial_config_id_ = 0;

    EngineOptions engine_options() const {
        EngineOptions o;
        o.mode = sc_.mode;
        o.aux_count = sc_.aux_count;
        o.implicit_local_only = sc_.implicit_local_only;
        return o;
    }
};

void Runner::build_initial() {
    int n0 = sc_.bootstrap ? 1 : sc_.n;
    SplitMix64 idrng(mix64(sc_.seed, 0x524f535445ull));
    std::vector<NodeId> ids;
    ids.reserve(n0);
    for (int i = 0; i < n0; ++i) ids.push_back(NodeId::from_rng(idrng));
    std::sort(ids.begin(), ids.end());
    Configuration cfg;
    cfg.params = sc_.params;
    for (int i = 0; i < n0; ++i)
        cfg.members.push_back(
            Member{ids[i], Endpoint{"127.0.0.1", static_cast<uint16_t>(10000 + i)}, {}});
    cfg.id = derive_config_id(ConfigurationId{}, ids);
    initial_config_id_ = cfg.id.value;
    for (int i = 0; i < n0; ++i) {
        SimNode node;
        node.member = cfg.members[i];
        node.rt = std::make_unique<NodeRuntime>(node.member, cfg, engine_options(), sc_.seed);
        by_endpoint_[node.member.endpoint] = i;
        nodes_.push_back(std::move(node));
    }
    for (int i = 0; i < n0; ++i) {
        int idx = i;
        nodes_[i].rt->on_view_change(
            [this, idx](const ViewChangeEvent& ev) { record_install(idx, ev); });
        // the constructor installed the initial view before the callback hook
        record_install(idx, nodes_[i].rt->installed_views().front());
    }
}

void Runner::spawn_joiners(int count) {
    SplitMix64 jrng(mix64(sc_.seed, 0x4a4f494e5full, static_cast<uint64_t>(join_waves_)));
    ++join_waves_;
    Endpoint seed_ep = nodes_.at(0).member.endpoint;
    for (int i = 0; i < count; ++i) {
        int idx = static_cast<int>(nodes_.size());
        SimNode node;
        node.member = Member{NodeId::from_rng(jrng),
                             Endpoint{"127.0.0.1", static_cast<uint16_t>(10000 + idx)},
                             {}};
        node.rt = std::make_unique<NodeRuntime>(node.member, seed_ep, sc_.params,
                                                engine_options(), sc_.seed);
        node.rt->on_view_change(
            [this, idx](const ViewChangeEvent& ev) { record_install(idx, ev); });
        by_endpoint_[node.member.endpoint] = idx;
        nodes_.push_back(std::move(node));
    }
}

void Runner::apply_events(Tick t) {
    for (const auto& ev : sc_.events) {
        if (const auto* c = std::get_if<CrashEvent>(&ev)) {
            if (c->tick != t) continue;
            for (int idx : c->nodes)
                if (idx >= 0 && idx < static_cast<int>(nodes_.size())) {
                    nodes_[idx].crashed = true;
                    nodes_[idx].inbox.clear();
                }
        } else if (const auto* w = std::get_if<JoinWaveEvent>(&ev)) {
            if (w->tick == t) spawn_joiners(w->count);
        }
    }
}

double Runner::ingress_prob(int node, Tick t) const {
    double p = sc_.drop_ingress;
    for (const auto& ev : sc_.events) {
        if (const auto* lp = std::get_if<LinkPatchEvent>(&ev)) {
            if (t >= lp->start && t < lp->end &&
                std::find(lp->nodes.begin(), lp->nodes.end(), node) != lp->nodes.end())
                p = std::max(p, lp->drop_ingress);
        } else if (const auto* ff = std::get_if<FlipFlopEvent>(&ev)) {
            if (t >= ff->start && t < ff->end && ((t - ff->start) / ff->period) % 2 == 0 &&
                std::find(ff->nodes.begin(), ff->nodes.end(), node) != ff->nodes.end())
                p = std::max(p, ff->drop_ingress);
        }
    }
    return p;
}

double Runner::egress_prob(int node, Tick t) const {
    double p = sc_.drop_egress;
    for (const auto& ev : sc_.events) {
        if (const auto* lp = std::get_if<LinkPatchEvent>(&ev)) {
            if (t >= lp->start && t < lp->end &&
                std::find(lp->nodes.begin(), lp->nodes.end(), node) != lp->nodes.end())
                p = std::max(p, lp->drop_egress);
        } else if (const auto* ff = std::get_if<FlipFlopEvent>(&ev)) {
            if (t >= ff->start && t < ff->end && ((t - ff->start) / ff->period) % 2 == 0 &&
                std::find(ff->nodes.begin(), ff->nodes.end(), node) != ff->nodes.end())
                p = std::max(p, ff->drop_egress);
        }
    }
    return p;
}

bool Runner::partitioned(int a, int b, Tick t) const {
    for (const auto& ev : sc_.events) {
        const auto* pe = std::get_if<PartitionEvent>(&ev);
        if (!pe || t < pe->start || t >= pe->end) continue;
        bool a_min = std::find(pe->minority.begin(), pe->minority.end(), a) != pe->minority.end();
        bool b_min = std::find(pe->minority.begin(), pe->minority.end(), b) != pe->minority.end();
        if (a_min != b_min) return true;
    }
    return false;
}

SplitMix64& Runner::pair_stream(int src, int dst) {
    auto it = streams_.find({src, dst});
    if (it == streams_.end())
        it = streams_
                 .emplace(std::make_pair(src, dst),
                          SplitMix64(mix64(sc_.seed, 0x4c494e4bull, static_cast<uint64_t>(src),
                                           static_cast<uint64_t>(dst))))
                 .first;
    return it->second;
}

void Runner::route(int src, const Outbound& out, Tick t) {
    auto it = by_endpoint_.find(out.dst);
    if (it == by_endpoint_.end()) {
        ++report_.dropped;
        return;
    }
    int dst = it->second;
    // every message draws the same number of samples from its pair stream,
    // so observation never perturbs later outcomes
    SplitMix64& st = pair_stream(src, dst);
    double u_egress = st.next_unit();
    double u_ingress = st.next_unit();
    Tick delay = sc_.delay_min;
    if (sc_.delay_max > sc_.delay_min) delay += st.next_below(sc_.delay_max - sc_.delay_min + 1);

    if (const auto* v = std::get_if<FastVoteMsg>(&out.msg->body))
        reg_.vote_digests[v->config_id.value].insert(v->proposal.digest());

    if (partitioned(src, dst, t) || u_egress < egress_prob(src, t) ||
        u_ingress < ingress_prob(dst, t)) {
        ++report_.dropped;
        return;
    }
    pending_[t + std::max<Tick>(1, delay)].emplace_back(dst, out.msg);
}

void Runner::deliver_tick(Tick t) {
    auto it = pending_.find(t);
    if (it == pending_.end()) return;
    for (auto& [dst, msg] : it->second) {
        if (nodes_[dst].crashed) {
            ++report_.dropped;
            continue;
        }
        ++report_.delivered;
        nodes_[dst].inbox.push_back(std::move(msg));
    }
    pending_.erase(it);
}

void Runner::record_install(int node, const ViewChangeEvent& ev) {
    uint64_t cfg_id = ev.config->id.value;
    if (!reg_.installs.insert({node, cfg_id}).second)
        throw InvariantError("view-change callback fired twice for one configuration at node " +
                             std::to_string(node));
    if (ev.cut.empty()) return;
    uint64_t parent = ev.cut.config_id.value;
    auto [it, inserted] = reg_.cut_by_parent.emplace(parent, ev.cut);
    if (!inserted && !(it->second == ev.cut))
        throw InvariantError("agreement violation: two different cuts decided for configuration " +
                             ev.cut.config_id.str());
    reg_.successor[parent] = cfg_id;
}

void Runner::check_chains() const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
        const auto& views = nodes_[i].rt->installed_views();
        for (size_t v = 1; v < views.size(); ++v) {
            uint64_t a = views[v - 1].config->id.value;
            uint64_t b = views[v].config->id.value;
            bool found = false;
            uint64_t cur = a;
            for (int steps = 0; steps < 100000; ++steps) {
                auto it = reg_.successor.find(cur);
                if (it == reg_.successor.end()) break;
                cur = it->second;
                if (cur == b) {
                    found = true;
                    break;
                }
            }
            if (!found)
                throw InvariantError("node " + std::to_string(i) +
                                     " installed a configuration outside the decided chain");
        }
    }
}

RunReport Runner::run() {
    sc_.validate();
    build_initial();
    std::string csv = "tick,node,size\n";
    for (Tick t = 0; t < sc_.duration; ++t) {
        apply_events(t);
        deliver_tick(t);
        for (size_t i = 0; i < nodes_.size(); ++i) {
            SimNode& node = nodes_[i];
            if (node.crashed) {
                node.inbox.clear();
                continue;
            }
            auto outs = node.rt->step(t, node.inbox);
            node.inbox.clear();
            for (const Outbound& out : outs) route(static_cast<int>(i), out, t);
        }
        for (size_t i = 0; i < nodes_.size(); ++i) {
            const SimNode& node = nodes_[i];
            if (node.crashed || node.rt->departed() || !node.rt->has_config()) continue;
            size_t size = node.rt->cluster_size();
            report_.rows.emplace_back(t, static_cast<int>(i), size);
            csv += std::to_string(t);
            csv += ',';
            csv += std::to_string(i);
            csv += ',';
            csv += std::to_string(size);
            csv += '\n';
        }
    }
    check_chains();

    report_.timeseries_csv = std::move(csv);
    report_.size_sequences.resize(nodes_.size());
    for (const auto& [t, node, size] : report_.rows) {
        auto& seq = report_.size_sequences[node];
        if (seq.empty() || seq.back() != size) seq.push_back(size);
        report_.unique_sizes.insert(size);
    }
    report_.decided_sequences.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        for (const auto& ev : nodes_[i].rt->installed_views())
            report_.decided_sequences[i].push_back(ev.config->id.str());
        if (nodes_[i].crashed) report_.crashed_nodes.push_back(static_cast<int>(i));
        if (nodes_[i].rt->departed()) report_.departed_nodes.push_back(static_cast<int>(i));
        for (const auto& [k, v] : nodes_[i].rt->counters()) report_.message_counts[k] += v;
        report_.classic_rounds += nodes_[i].rt->classic_rounds_started();
    }
    for (const auto& [cfg, digests] : reg_.vote_digests)
        if (digests.size() > 1) report_.conflicts += digests.size() - 1;
    report_.agreement_ok = true;  // violations throw during the run
    return std::move(report_);
}

std::vector<int> sample_nodes(int n, int count, SplitMix64& rng) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    for (int i = 0; i < count && i < n; ++i) {
        int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(n - i)));
        std::swap(all[i], all[j]);
    }
    all.resize(std::min(count, n));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

RunReport run(const Scenario& scenario) { return Runner(scenario).run(); }

// ------------------------------------------------------------- scenarios

Scenario crash_scenario(int n, const ProtocolParams& p, int failures, uint64_t seed,
                        Tick duration) {
    Scenario sc;
    sc.n = n;
    sc.params = p;
    sc.seed = seed;
    sc.duration = duration;
    SplitMix64 rng(mix64(seed, 0x4352534855ull));
    sc.events.push_back(CrashEvent{sample_nodes(n, failures, rng), 50});
    return sc;
}

Scenario flipflop_scenario(int n, const ProtocolParams& p, int victims, uint64_t seed,
                           Tick duration) {
    Scenario sc;
    sc.n = n;
    sc.params = p;
    sc.seed = seed;
    sc.duration = duration;
    SplitMix64 rng(mix64(seed, 0x464c4950ull));
    sc.events.push_back(
        FlipFlopEvent{sample_nodes(n, victims, rng), 20, 1.0, 0.0, 30, duration - 10});
    return sc;
}

Scenario egress_loss_scenario(int n, const ProtocolParams& p, int victims, double drop,
                              uint64_t seed, Tick duration) {
    Scenario sc;
    sc.n = n;
    sc.params = p;
    sc.seed = seed;
    sc.duration = duration;
    SplitMix64 rng(mix64(seed, 0x45475253ull));
    sc.events.push_back(LinkPatchEvent{sample_nodes(n, victims, rng), 0.0, drop, 30, duration});
    return sc;
}

Scenario partition_scenario(int n, const ProtocolParams& p, int minority, Tick heal_at,
                            uint64_t seed, Tick duration) {
    Scenario sc;
    sc.n = n;
    sc.params = p;
    sc.seed = seed;
    sc.duration = duration;
    SplitMix64 rng(mix64(seed, 0x50415254ull));
    sc.events.push_back(PartitionEvent{sample_nodes(n, minority, rng), 30, heal_at});
    return sc;
}

Scenario bootstrap_scenario(int n, const ProtocolParams& p, uint64_t seed, Tick duration) {
    Scenario sc;
    sc.n = n;
    sc.params = p;
    sc.seed = seed;
    sc.duration = duration;
    sc.bootstrap = true;
    if (n > 1) sc.events.push_back(JoinWaveEvent{n - 1, 1});
    return sc;
}

Scenario random_adversity_scenario(uint64_t seed) {
    SplitMix64 g(mix64(seed, 0x414456ull));
    Scenario sc;
    sc.n = 5 + static_cast<int>(g.next_below(12));  // 5..16
    sc.params = ProtocolParams{};
    sc.seed = mix64(seed, 0x5345454eull);
    sc.duration = 120 + static_cast<Tick>(g.next_below(60));
    sc.drop_ingress = (g.next_below(2) == 0) ? 0.12 * g.next_unit() : 0.0;
    sc.drop_egress = (g.next_below(2) == 0) ? 0.12 * g.next_unit() : 0.0;
    if (sc.delay_max == sc.delay_min && g.next_below(2) == 0) sc.delay_max = sc.delay_min + 2;

    // crashes: up to floor(n/4)
    if (g.next_below(3) != 0) {
        int max_crash = sc.n / 4;
        if (max_crash > 0) {
            int count = 1 + static_cast<int>(g.next_below(static_cast<uint64_t>(max_crash)));
            Tick at = 20 + static_cast<Tick>(g.next_below(60));
            sc.events.push_back(CrashEvent{sample_nodes(sc.n, count, g), at});
        }
    }
    // a healing partition
    if (g.next_below(2) == 0) {
        int minority = 1 + static_cast<int>(g.next_below(static_cast<uint64_t>(sc.n / 3 + 1)));
        Tick start = 15 + static_cast<Tick>(g.next_below(40));
        Tick len = 20 + static_cast<Tick>(g.next_below(40));
        PartitionEvent pe{sample_nodes(sc.n, minority, g), start, start + len};
        sc.events.push_back(pe);
    }
    // occasional flip-flop on one node
    if (g.next_below(3) == 0) {
        Tick start = 20 + static_cast<Tick>(g.next_below(30));
        sc.events.push_back(FlipFlopEvent{sample_nodes(sc.n, 1, g), 10, 1.0, 0.0, start,
                                          start + 60});
    }
    return sc;
}

}  // namespace rapid
