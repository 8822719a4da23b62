#pragma once

#include "scbn/ops.hpp"

#include <map>
#include <memory>
#include <random>
#include <string>

namespace scbn {

// Named parameter tensors plus non-trainable buffers (batchnorm running stats).
template <class S>
struct ParamStore {
    std::map<std::string, Tensor<S>> params;
    std::map<std::string, Tensor<S>> buffers;

    Tensor<S>& param(const std::string& name) {
        auto it = params.find(name);
        require(it != params.end(), "missing parameter: " + name);
        return it->second;
    }
    Tensor<S>& buffer(const std::string& name) {
        auto it = buffers.find(name);
        require(it != buffers.end(), "missing buffer: " + name);
        return it->second;
    }
};

// Binds a store's parameters into one graph as leaves, on first use.
template <class S>
struct ParamBinding {
    ParamStore<S>* store = nullptr;
    Graph<S>* g = nullptr;
    bool train_params = false;
    std::map<std::string, Var> vars;

    Var operator()(const std::string& name) {
        auto it = vars.find(name);
        if (it != vars.end()) return it->second;
        Var v = g->leaf(store->param(name), train_params);
        vars.emplace(name, v);
        return v;
    }
    Tensor<S>& buffer(const std::string& name) { return store->buffer(name); }
};

// ---------------------------------------------------------------------------
// Initializers (He-style normal for conv weights).

template <class S>
void init_conv(ParamStore<S>& st, const std::string& scope, int c_in, int c_out,
               int k, std::mt19937_64& rng) {
    const S stddev = S(std::sqrt(2.0 / double(c_in * k * k)));
    st.params[scope + ".w"] = Tensor<S>::randn(Shape{c_out, c_in, k, k}, rng, stddev);
    st.params[scope + ".b"] = Tensor<S>::zeros(Shape{1, c_out, 1, 1});
}

template <class S>
void init_bn(ParamStore<S>& st, const std::string& scope, int c) {
    st.params[scope + ".gamma"] = Tensor<S>::full(Shape{1, c, 1, 1}, S(1));
    st.params[scope + ".beta"] = Tensor<S>::zeros(Shape{1, c, 1, 1});
    st.buffers[scope + ".running_mean"] = Tensor<S>::zeros(Shape{1, c, 1, 1});
    st.buffers[scope + ".running_var"] = Tensor<S>::full(Shape{1, c, 1, 1}, S(1));
}

// ---------------------------------------------------------------------------
// Residual block: conv3x3 -> BN -> relu -> conv3x3 -> BN, added to a shortcut
// (1x1 projection when the channel count changes), then relu.

template <class S>
void init_residual_block(ParamStore<S>& st, const std::string& scope, int c_in,
                         int c_out, std::mt19937_64& rng) {
    init_conv(st, scope + ".conv1", c_in, c_out, 3, rng);
    init_bn(st, scope + ".bn1", c_out);
    init_conv(st, scope + ".conv2", c_out, c_out, 3, rng);
    init_bn(st, scope + ".bn2", c_out);
    if (c_in != c_out) init_conv(st, scope + ".proj", c_in, c_out, 1, rng);
}

template <class S>
Var residual_block(ParamBinding<S>& p, const std::string& scope, Var x, bool training) {
    Graph<S>& g = *p.g;
    const int c_in = g.value(x).shape.c;
    const int c_out = g.value(p(scope + ".conv1.w")).shape.n;
    const bool has_proj = p.store->params.count(scope + ".proj.w") > 0;
    require(c_in == c_out || has_proj,
            "residual_block " + scope + ": channel change without projection");

    Var h = conv2d(g, x, p(scope + ".conv1.w"), p(scope + ".conv1.b"), 1, 1);
    h = batchnorm2d(g, h, p(scope + ".bn1.gamma"), p(scope + ".bn1.beta"),
                    p.buffer(scope + ".bn1.running_mean"),
                    p.buffer(scope + ".bn1.running_var"), training);
    h = relu(g, h);
    h = conv2d(g, h, p(scope + ".conv2.w"), p(scope + ".conv2.b"), 1, 1);
    h = batchnorm2d(g, h, p(scope + ".bn2.gamma"), p(scope + ".bn2.beta"),
                    p.buffer(scope + ".bn2.running_mean"),
                    p.buffer(scope + ".bn2.running_var"), training);
    Var shortcut = has_proj
                       ? conv2d(g, x, p(scope + ".proj.w"), p(scope + ".proj.b"), 1, 0)
                       : x;
    return relu(g, add(g, h, shortcut));
}

// ---------------------------------------------------------------------------
// Attention gate: psi = sigmoid(conv1x1(relu(conv1x1(skip) + conv1x1(gate)))),
// gate upsampled (nearest) when spatially half the skip; output skip * psi.

template <class S>
void init_attention_gate(ParamStore<S>& st, const std::string& scope, int c_skip,
                         int c_gate, int f_int, std::mt19937_64& rng) {
    require(f_int >= 1, "attention gate: F_int must be >= 1");
    init_conv(st, scope + ".wskip", c_skip, f_int, 1, rng);
    init_conv(st, scope + ".wgate", c_gate, f_int, 1, rng);
    init_conv(st, scope + ".psi", f_int, 1, 1, rng);
}

template <class S>
Var attention_gate(ParamBinding<S>& p, const std::string& scope, Var skip, Var gate) {
    Graph<S>& g = *p.g;
    const Shape ss = g.value(skip).shape, gs = g.value(gate).shape;
    require(ss.n == gs.n, "attention_gate: batch mismatch " + ss.str() + " vs " + gs.str());
    Var gate_r = gate;
    if (gs.h * 2 == ss.h && gs.w * 2 == ss.w)
        gate_r = upsample_nearest2x(g, gate);
    else
        require(gs.h == ss.h && gs.w == ss.w,
                "attention_gate: gate must match skip or be half its size");
    Var a = conv2d(g, skip, p(scope + ".wskip.w"), p(scope + ".wskip.b"), 1, 0);
    Var b = conv2d(g, gate_r, p(scope + ".wgate.w"), p(scope + ".wgate.b"), 1, 0);
    Var psi = conv2d(g, relu(g, add(g, a, b)), p(scope + ".psi.w"), p(scope + ".psi.b"), 1, 0);
    return mul_bcast_channel(g, skip, sigmoid(g, psi));
}

// ---------------------------------------------------------------------------
// DropBlock

struct DropBlockConfig {
    int block_size = 5;
    double drop_rate = 0.3;
    bool enabled_at_inference = false;

    void validate() const {
        require(block_size >= 1 && block_size % 2 == 1, "dropblock: block_size must be odd");
        require(drop_rate >= 0.0 && drop_rate < 1.0, "dropblock: drop_rate must be in [0,1)");
    }
};

// Seed probability so the expected dropped fraction matches drop_rate.
inline double dropblock_gamma(double drop_rate, int block_size, int feature_size) {
    const double valid = double(feature_size - block_size + 1);
    return drop_rate / double(block_size * block_size) *
           double(feature_size) * feature_size / (valid * valid);
}

// Zeroes contiguous block_size x block_size regions around Bernoulli seed
// centers (block fully inside the map), one mask per sample shared across
// channels, survivors rescaled by total/kept.
template <class S>
Var dropblock(Graph<S>& g, Var x, const DropBlockConfig& cfg, std::mt19937_64& rng,
              bool active) {
    cfg.validate();
    if (!active || cfg.drop_rate == 0.0) return x;
    const Shape xs = g.value(x).shape;
    const int fs = std::min(xs.h, xs.w);
    require(cfg.block_size <= fs, "dropblock: block_size " + std::to_string(cfg.block_size) +
                                      " exceeds feature size " + std::to_string(fs));
    const double gamma = dropblock_gamma(cfg.drop_rate, cfg.block_size, fs);
    const int r = cfg.block_size / 2;

    Tensor<S> mask = Tensor<S>::full(Shape{xs.n, 1, xs.h, xs.w}, S(1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < xs.n; ++n) {
        for (int y = r; y < xs.h - r; ++y)
            for (int xx = r; xx < xs.w - r; ++xx)
                if (u(rng) < gamma)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx)
                            mask.at(n, 0, y + dy, xx + dx) = S(0);
        std::int64_t kept = 0;
        const std::int64_t total = std::int64_t(xs.h) * xs.w;
        for (std::int64_t i = 0; i < total; ++i)
            if (mask.data[std::int64_t(n) * total + i] > S(0)) ++kept;
        if (kept > 0) {
            const S s = S(double(total) / double(kept));
            mask.data.segment(std::int64_t(n) * total, total) *= s;
        }
    }
    return mul_bcast_channel(g, x, g.constant(std::move(mask)));
}

}  // namespace scbn
