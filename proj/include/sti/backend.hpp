#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "sti/quantizer.hpp"
#include "sti/types.hpp"

namespace sti {

// Token activations, row-major l x d.
struct Activations {
    int seq_len = 0;
    int dim = 0;
    std::vector<float> data;

    float* row(int i) { return data.data() + static_cast<std::size_t>(i) * dim; }
    const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

Activations random_activations(int seq_len, int dim, std::uint64_t seed);

// One layer's decoded shards, slice order.
struct DecodedLayer {
    std::vector<RawShard> shards;
};

class ComputeBackend {
public:
    virtual ~ComputeBackend() = default;
    virtual const char* name() const = 0;
    // Synthetic delay consumes no weights; the executor skips decoding for it.
    virtual bool needs_decoded_weights() const = 0;
    virtual void run_layer(const DecodedLayer& weights, Activations& act, int width) = 0;
};

// Dense attention + FFN over m vertical slices, post-norm residuals with unit
// gain so outputs stay well-scaled. Used for correctness checks and for
// importance evaluation.
class ReferenceBackend : public ComputeBackend {
public:
    const char* name() const override { return "reference"; }
    bool needs_decoded_weights() const override { return true; }
    void run_layer(const DecodedLayer& weights, Activations& act, int width) override;

    // Multiply-accumulate count of all run_layer calls since reset.
    std::uint64_t flops() const { return flops_; }
    void reset_flops() { flops_ = 0; }

private:
    std::uint64_t flops_ = 0;
};

// Sleeps for the profiled T_comp(l, m, freq) of each layer, which includes
// decompression by definition; activations pass through unchanged.
class SyntheticDelayBackend : public ComputeBackend {
public:
    SyntheticDelayBackend(HardwareProfile profile, int input_len, std::string freq)
        : profile_(std::move(profile)), input_len_(input_len), freq_(std::move(freq)) {}

    const char* name() const override { return "synthetic"; }
    bool needs_decoded_weights() const override { return false; }
    void run_layer(const DecodedLayer& weights, Activations& act, int width) override;

private:
    HardwareProfile profile_;
    int input_len_;
    std::string freq_;
};

// In-place layer normalization per row, unit gamma, zero beta.
void layer_norm(Activations& act);

}  // namespace sti
