#pragma once

#include <string>
#include <vector>

#include "rapid/core.hpp"

namespace rapid::testutil {

// n distinct members with reproducible ids and ports port_base+i, sorted by id.
inline std::vector<Member> make_members(int n, uint64_t seed = 42, int port_base = 9000) {
    SplitMix64 rng(mix64(seed, 0x5445535453ull));  // "TESTS"
    std::vector<Member> members;
    members.reserve(n);
    for (int i = 0; i < n; ++i) {
        Member m;
        m.id = NodeId::from_rng(rng);
        m.endpoint = Endpoint{"127.0.0.1", static_cast<uint16_t>(port_base + i)};
        members.push_back(std::move(m));
    }
    std::sort(members.begin(), members.end(),
              [](const Member& a, const Member& b) { return a.id < b.id; });
    return members;
}

inline Configuration make_config(int n, ProtocolParams params = {}, uint64_t seed = 42) {
    Configuration cfg;
    cfg.members = make_members(n, seed);
    cfg.params = params;
    cfg.id = derive_config_id(ConfigurationId{}, member_ids(cfg));
    cfg.check_invariants();
    return cfg;
}

}  // namespace rapid::testutil
