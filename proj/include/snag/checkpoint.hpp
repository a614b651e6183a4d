#pragma once

#include <string>
#include <vector>

#include "snag/optim.hpp"
#include "snag/tensor.hpp"

namespace snag {

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<Scalar> values;
};

struct Checkpoint {
    std::string config_echo;
    std::vector<CheckpointEntry> entries;
};

// Binary `SNCK` layout, everything little-endian: magic, u32 format version,
// u32 config-echo length + bytes, u32 tensor count, then per tensor u32 name
// length + bytes, u32 rank, u32 dims, f64 row-major payload.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_echo);
Checkpoint load_checkpoint(const std::string& path);

// Copies values into an existing store by name. The store must hold exactly
// the checkpointed tensors with matching shapes.
void restore_checkpoint(ParamStore& params, const Checkpoint& ck);

}  // namespace snag
