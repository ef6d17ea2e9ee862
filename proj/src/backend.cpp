#include "sti/backend.hpp"

#include <cmath>
#include <random>
#include <thread>

namespace sti {

Activations random_activations(int seq_len, int dim, std::uint64_t seed) {
    Activations act;
    act.seq_len = seq_len;
    act.dim = dim;
    act.data.resize(static_cast<std::size_t>(seq_len) * dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : act.data) v = dist(rng);
    return act;
}

void layer_norm(Activations& act) {
    for (int i = 0; i < act.seq_len; ++i) {
        float* row = act.row(i);
        double mean = 0.0;
        for (int j = 0; j < act.dim; ++j) mean += row[j];
        mean /= act.dim;
        double var = 0.0;
        for (int j = 0; j < act.dim; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= act.dim;
        const float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-6));
        for (int j = 0; j < act.dim; ++j) row[j] = static_cast<float>((row[j] - mean) * inv);
    }
}

namespace {

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f));
}

// out[l x cols] += in[l x rows_in] * W^T with W given as (cols x rows_in)
// row-major, i.e. the stored d x dh / dff' x d / d x dff' slices.
void matmul_wt(const float* in, int l, int rows_in, const Matrix& w, float* out,
               std::uint64_t* flops) {
    // w.rows == cols of output only when multiplying by W^T; here we treat
    // each row of w as one output feature's weights over rows_in inputs.
    if (w.cols != static_cast<std::uint32_t>(rows_in)) throw ShapeError("matmul_wt dim mismatch");
    const int out_cols = static_cast<int>(w.rows);
    for (int i = 0; i < l; ++i) {
        const float* x = in + static_cast<std::size_t>(i) * rows_in;
        float* y = out + static_cast<std::size_t>(i) * out_cols;
        for (int c = 0; c < out_cols; ++c) {
            const float* wr = w.data.data() + static_cast<std::size_t>(c) * w.cols;
            double acc = 0.0;
            for (int j = 0; j < rows_in; ++j) acc += static_cast<double>(x[j]) * wr[j];
            y[c] += static_cast<float>(acc);
        }
    }
    *flops += static_cast<std::uint64_t>(l) * out_cols * rows_in;
}

// out[l x w.cols] += in[l x w.rows] * W with W (w.rows x w.cols) row-major.
void matmul(const float* in, int l, const Matrix& w, float* out, std::uint64_t* flops) {
    for (int i = 0; i < l; ++i) {
        const float* x = in + static_cast<std::size_t>(i) * w.rows;
        float* y = out + static_cast<std::size_t>(i) * w.cols;
        for (std::uint32_t j = 0; j < w.rows; ++j) {
            const float xv = x[j];
            if (xv == 0.0f) continue;
            const float* wr = w.data.data() + static_cast<std::size_t>(j) * w.cols;
            for (std::uint32_t c = 0; c < w.cols; ++c) y[c] += xv * wr[c];
        }
    }
    *flops += static_cast<std::uint64_t>(l) * w.rows * w.cols;
}

}  // namespace

void ReferenceBackend::run_layer(const DecodedLayer& weights, Activations& act, int width) {
    if (static_cast<int>(weights.shards.size()) != width)
        throw ShapeError("expected " + std::to_string(width) + " decoded shards, got " +
                         std::to_string(weights.shards.size()));
    const int l = act.seq_len;
    const int d = act.dim;

    for (const auto& s : weights.shards) {
        // Q,K,V,O are d x dh; FFN1 dff' x d; FFN2 d x dff'.
        for (int i = 0; i < 4; ++i)
            if (static_cast<int>(s.matrices[i].rows) != d) throw ShapeError("attention slice rows != d");
        if (static_cast<int>(s.matrices[4].cols) != d || static_cast<int>(s.matrices[5].rows) != d)
            throw ShapeError("ffn slice dims mismatch");
    }

    const int dh = static_cast<int>(weights.shards[0].matrices[0].cols);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    std::vector<float> attn_out(static_cast<std::size_t>(l) * d, 0.0f);
    std::vector<float> q(static_cast<std::size_t>(l) * dh);
    std::vector<float> k(static_cast<std::size_t>(l) * dh);
    std::vector<float> v(static_cast<std::size_t>(l) * dh);
    std::vector<float> scores(static_cast<std::size_t>(l) * l);
    std::vector<float> head(static_cast<std::size_t>(l) * dh);

    for (const auto& s : weights.shards) {
        // projections: X (l x d) times the d x dh slices
        std::fill(q.begin(), q.end(), 0.0f);
        std::fill(k.begin(), k.end(), 0.0f);
        std::fill(v.begin(), v.end(), 0.0f);
        matmul(act.data.data(), l, s.matrices[0], q.data(), &flops_);
        matmul(act.data.data(), l, s.matrices[1], k.data(), &flops_);
        matmul(act.data.data(), l, s.matrices[2], v.data(), &flops_);

        // scaled dot-product attention for this head
        for (int i = 0; i < l; ++i) {
            float* srow = scores.data() + static_cast<std::size_t>(i) * l;
            float maxv = -1e30f;
            for (int j = 0; j < l; ++j) {
                double acc = 0.0;
                for (int t = 0; t < dh; ++t)
                    acc += static_cast<double>(q[i * dh + t]) * k[j * dh + t];
                srow[j] = static_cast<float>(acc) * scale;
                maxv = std::max(maxv, srow[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < l; ++j) {
                srow[j] = std::exp(srow[j] - maxv);
                denom += srow[j];
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (int j = 0; j < l; ++j) srow[j] *= inv;
        }
        flops_ += 2ull * l * l * dh;

        std::fill(head.begin(), head.end(), 0.0f);
        for (int i = 0; i < l; ++i) {
            const float* srow = scores.data() + static_cast<std::size_t>(i) * l;
            float* hrow = head.data() + static_cast<std::size_t>(i) * dh;
            for (int j = 0; j < l; ++j) {
                const float w = srow[j];
                if (w == 0.0f) continue;
                const float* vrow = v.data() + static_cast<std::size_t>(j) * dh;
                for (int t = 0; t < dh; ++t) hrow[t] += w * vrow[t];
            }
        }

        // output slice: head (l x dh) through W_O (d x dh), summed into attn_out;
        // summing the m slices is the concatenated O projection
        matmul_wt(head.data(), l, dh, s.matrices[3], attn_out.data(), &flops_);
    }

    for (std::size_t i = 0; i < act.data.size(); ++i) act.data[i] += attn_out[i];
    layer_norm(act);

    // FFN over the m slices' neurons
    const int dff_slice = static_cast<int>(weights.shards[0].matrices[4].rows);
    std::vector<float> ffn_out(static_cast<std::size_t>(l) * d, 0.0f);
    std::vector<float> hidden(static_cast<std::size_t>(l) * dff_slice);
    for (const auto& s : weights.shards) {
        std::fill(hidden.begin(), hidden.end(), 0.0f);
        matmul_wt(act.data.data(), l, d, s.matrices[4], hidden.data(), &flops_);
        for (auto& h : hidden) h = gelu(h);
        matmul_wt(hidden.data(), l, dff_slice, s.matrices[5], ffn_out.data(), &flops_);
    }
    for (std::size_t i = 0; i < act.data.size(); ++i) act.data[i] += ffn_out[i];
    layer_norm(act);
}

void SyntheticDelayBackend::run_layer(const DecodedLayer&, Activations&, int width) {
    const Micros us = profile_.compute(input_len_, width, freq_);
    std::this_thread::sleep_for(std::chrono::microseconds(us));
}

}  // namespace sti
