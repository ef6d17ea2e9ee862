#pragma once

#include <functional>
#include <map>
#include <memory>

#include "sti/backend.hpp"
#include "sti/synth.hpp"
#include "sti/types.hpp"

// Produces the hardware profile (T_io, T_comp) by measurement and the
// importance map by shard ablation against a pluggable evaluator.

namespace sti {

// Metric for a full-model bitwidth assignment; deterministic for a fixed
// assignment and seed.
using BitwidthAssignment = std::map<ShardId, int>;

class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual const char* id() const = 0;
    virtual double evaluate(const BitwidthAssignment& assignment) = 0;
};

// Desk-scale default: a frozen random teacher model generates outputs on a
// fixed input batch; the metric is 1 - normalized MSE of the quantized
// model's outputs against the teacher's.
class SyntheticTaskEvaluator : public Evaluator {
public:
    struct Options {
        int eval_inputs = 4;
        int input_len = 8;
        std::uint64_t seed = 1;
    };

    SyntheticTaskEvaluator(const RawModel& model, const ModelManifest& manifest, Options opts = {});

    const char* id() const override { return "synthetic-regression"; }
    double evaluate(const BitwidthAssignment& assignment) override;
    std::uint64_t calls() const { return calls_; }

private:
    const RawShard& decoded(ShardId id, int bitwidth);

    ModelManifest manifest_;
    Options opts_;
    std::vector<std::vector<RawShard>> raw_;              // teacher weights
    std::map<std::pair<ShardId, int>, RawShard> cache_;   // decoded quantized shards
    std::map<std::pair<ShardId, int>, QuantizedShard> encoded_;
    std::vector<Activations> inputs_;
    std::vector<Activations> teacher_out_;
    double teacher_variance_ = 0.0;
    std::uint64_t calls_ = 0;
};

struct IoProfileOptions {
    int trials = 3;
    bool bypass_cache = true;
};

// One mean delay per bitwidth, measured on a representative shard (one shard
// suffices: all shards of a width have the same parameter count).
// Non-monotone results warn via the returned profile's check, never fail.
HardwareProfile profile_io(const ModelManifest& manifest, const IoProfileOptions& opts = {});

struct ComputeProfileOptions {
    std::vector<int> input_lens{128};
    std::vector<int> widths;  // empty = m_min..M is NOT assumed; caller sets
    std::vector<std::string> freq_tags{"peak"};
    int trials = 3;
    int decomp_bitwidth = 6;  // dry run decodes m shards at this width
};

// Dry-runs one transformer layer per (l, m, freq) tuple: decode m shards at
// the 6-bit upper bound, then execute the layer.
void profile_compute(const ModelManifest& manifest, ComputeBackend& backend,
                     const ComputeProfileOptions& opts, HardwareProfile& out);

struct ImportanceOptions {
    int low_bitwidth = 2;
    int high_bitwidth = 32;
    // Called after each ablation step so partial results survive an
    // evaluator failure.
    std::function<void(const ImportanceMap&)> checkpoint;
};

// baseline = evaluate(everything at low); score(s) = evaluate(low everywhere
// except s at high) - baseline. Exactly N*M + 1 evaluator calls.
ImportanceMap profile_importance(const ModelManifest& manifest, Evaluator& evaluator,
                                 const ImportanceOptions& opts = {});

}  // namespace sti
