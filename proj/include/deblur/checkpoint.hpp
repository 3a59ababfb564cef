#pragma once

#include <string>
#include <vector>

#include "deblur/net_common.hpp"
#include "deblur/tensor.hpp"

// "DBLF" checkpoint: 4-byte magic, u32 format version, length-prefixed
// canonical config text, then named tensor records (u32 name length, name,
// u32 rank, u32 dims, little-endian f32 data) until end of file. Names are
// unique; one file can hold several networks under distinct prefixes.

namespace deblur {

struct CheckpointRecord {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    std::string config_text;
    std::vector<CheckpointRecord> records;

    void add(const std::string& name, Tensor t);
    const Tensor* find(const std::string& name) const;
    bool has_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Copies every parameter of `set` into `ck` under `prefix`.
void add_net_params(Checkpoint& ck, const std::string& prefix, const ParamSet<float>& set);

// Fills `set` from records under `prefix`. Every parameter must be present
// with a matching shape; leftover records under the prefix are an error.
void load_net_params(const Checkpoint& ck, const std::string& prefix, ParamSet<float>& set);

} // namespace deblur
