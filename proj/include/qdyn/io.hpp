#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "qdyn/params.hpp"

namespace qdyn::io {

// Plain-text key-value files: one `key = value` per line, '#' comments.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv(const std::string& text);
KvMap read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);

// FNV-1a 64-bit content hash (not cryptographic; used for manifests).
uint64_t fnv1a(const void* data, size_t n);
uint64_t fnv1a_file(const std::string& path);
std::string hex64(uint64_t v);

// Checkpoint file: text manifest (header key-values plus one `param` line per
// entry giving name, learnable flag, shape and offset in doubles), then a raw
// little-endian IEEE-754 double blob. See README for the exact grammar.
struct Checkpoint {
    KvMap header;
    nn::ParamStore params;
};

void save_checkpoint(const std::string& path, const KvMap& header,
                     const nn::ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

/// Hash of the parameter blob as it would be serialized.
uint64_t param_hash(const nn::ParamStore& params);

} // namespace qdyn::io
