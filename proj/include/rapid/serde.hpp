#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rapid/core.hpp"

// Canonical structured-text encoding of every domain type, used verbatim for
// wire messages, scenario files and reports. Field names and representation
// are fixed by docs/SCHEMA.md (schema version 1); object keys serialize in
// lexicographic order, so equal values produce identical bytes.

namespace rapid {

using Json = nlohmann::json;

void to_json(Json& j, const Endpoint& e);
void from_json(const Json& j, Endpoint& e);

void to_json(Json& j, const NodeId& id);
void from_json(const Json& j, NodeId& id);

void to_json(Json& j, const ConfigurationId& id);
void from_json(const Json& j, ConfigurationId& id);

void to_json(Json& j, const Fraction& f);
void from_json(const Json& j, Fraction& f);

void to_json(Json& j, const Member& m);
void from_json(const Json& j, Member& m);

void to_json(Json& j, const ProtocolParams& p);
void from_json(const Json& j, ProtocolParams& p);

void to_json(Json& j, const Configuration& c);
void from_json(const Json& j, Configuration& c);

void to_json(Json& j, const Alert& a);
void from_json(const Json& j, Alert& a);

void to_json(Json& j, const CutProposal& c);
void from_json(const Json& j, CutProposal& c);

// Canonical byte string: compact dump, sorted keys, no trailing newline.
std::string canonical_bytes(const Json& j);

// Wire framing: 4-byte big-endian length prefix followed by the canonical
// serialization of one tagged object.
std::string frame(const Json& j);
// Consumes one frame from buf starting at offset; returns the parsed object
// and advances offset, or nullopt if the buffer does not yet hold a full
// frame. Throws ProtocolError on oversized or malformed frames.
std::optional<Json> unframe(const std::string& buf, size_t& offset);

constexpr size_t kMaxFrameBytes = 16u << 20;

}  // namespace rapid
