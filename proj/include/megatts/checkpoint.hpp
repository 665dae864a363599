#pragma once

// Versioned binary checkpoint: magic "MTS2", little-endian fixed-width
// integers, length-prefixed strings, and named float64 tensor records.

#include "megatts/config.hpp"
#include "megatts/nn.hpp"
#include "megatts/optim.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace megatts {

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::string stage;
    std::string config_json;  // RunConfig snapshot
    std::int64_t step = 0;
    std::int64_t adam_steps = 0;
    std::vector<std::pair<std::string, Matrix>> tensors;  // parameters, then "adam.m/" and "adam.v/" moments

    bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& c);
// Throws ParseError (with byte offset) on malformed input, VersionError on
// an unknown format version.
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of parameters and, when given, optimizer state.
Checkpoint capture(const std::string& stage, const RunConfig& cfg, const ParameterSet& params, const Adam* adam,
                   std::int64_t step);
// Restores parameter values (every parameter must be present with matching
// shape) and, when given, the optimizer state.
void restore(const Checkpoint& c, ParameterSet& params, Adam* adam);
RunConfig checkpoint_config(const Checkpoint& c);

}  // namespace megatts
