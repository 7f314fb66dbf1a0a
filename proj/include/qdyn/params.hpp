#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qdyn/tensor.hpp"

namespace qdyn::nn {

// One named array of scalars. Learnable entries are optimizer targets;
// non-learnable entries (batch-norm running statistics) are state that still
// rides along in checkpoints.
struct ParamEntry {
    std::string name;
    ad::Shape shape;
    std::vector<double> value;
    bool learnable = true;
};

class ParamStore {
public:
    int add(std::string name, ad::Shape shape, std::vector<double> init, bool learnable = true);

    ParamEntry& entry(int id) { return entries_[id]; }
    const ParamEntry& entry(int id) const { return entries_[id]; }
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;
    int find(const std::string& name) const; // -1 when absent

    size_t count() const { return entries_.size(); }
    int64_t learnable_scalars() const;
    int64_t scalars_with_prefix(const std::string& prefix) const; // learnable only

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

private:
    std::vector<ParamEntry> entries_;
};

enum class RunMode {
    Train,       // batch-norm uses batch stats and updates running stats
    FrozenStats, // batch-norm reuses the stats cached by the last Train pass
    Eval,        // batch-norm uses running stats; nothing is mutated
};

// Per-tape view of a ParamStore. With a tape, every learnable entry becomes
// a leaf up front so the gradient map covers all parameters; without one,
// parameters surface as constants and nothing is recorded.
class Binding {
public:
    Binding(ParamStore& store, ad::Tape* tape, RunMode mode);

    const ad::Tensor& param(int id);
    ParamStore& store() { return *store_; }
    ad::Tape* tape() const { return tape_; }
    RunMode mode() const { return mode_; }
    void set_mode(RunMode m) { mode_ = m; }

private:
    ParamStore* store_;
    ad::Tape* tape_;
    RunMode mode_;
    std::vector<std::optional<ad::Tensor>> cache_;
};

} // namespace qdyn::nn
