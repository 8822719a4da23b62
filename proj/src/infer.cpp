#include "scbn/infer.hpp"

#include "scbn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <thread>

namespace scbn {

namespace {

std::vector<int> tile_origins(int extent, int tile, int overlap) {
    std::vector<int> origins;
    const int stride = tile - overlap;
    for (int o = 0;; o += stride) {
        if (o + tile >= extent) {
            origins.push_back(extent - tile);
            break;
        }
        origins.push_back(o);
    }
    return origins;
}

// Interior tile edges are trimmed: the outer overlap/2 band contributes
// nothing (those pixels lack context the untiled pass would have seen) and a
// raised-cosine crossfade covers the middle of the overlap. Grid-border edges
// keep full weight, matching the zero padding of an untiled pass.
std::vector<double> edge_weights(int tile, int origin, int extent, int overlap) {
    std::vector<double> w(std::size_t(tile), 1.0);
    if (overlap <= 0) return w;
    const int margin = overlap / 2;
    const int band = overlap - 2 * margin;  // 0 or 1 for even/odd overlaps
    auto ramp = [&](int d) {
        if (d < margin) return 0.0;
        if (d >= overlap - margin) return 1.0;
        return 0.5 * (1.0 - std::cos(M_PI * (d - margin + 0.5) / std::max(band, 1)));
    };
    for (int i = 0; i < tile; ++i) {
        double v = 1.0;
        if (origin > 0) v *= ramp(i);
        if (origin + tile < extent) v *= ramp(tile - 1 - i);
        w[std::size_t(i)] = v;
    }
    return w;
}

// One blended full-raster forward pass.
Tensor<float> predict_once(Checkpoint<float>& ckpt, const RasterStack& stack,
                           const Tensor<float>& mask_probs, int tile, int overlap,
                           ForwardMode mode, std::mt19937_64& rng) {
    const int H = stack.height, W = stack.width, C = ckpt.arch.n_classes;
    const int c_aux = stack.channels;
    Tensor<float> acc(Shape{1, C, H, W});
    Tensor<float> wsum(Shape{1, 1, H, W});
    const std::int64_t plane = std::int64_t(H) * W;
    const std::int64_t tplane = std::int64_t(tile) * tile;

    for (int oy : tile_origins(H, tile, overlap))
        for (int ox : tile_origins(W, tile, overlap)) {
            Tensor<float> aux(Shape{1, c_aux, tile, tile});
            Tensor<float> m(Shape{1, C, tile, tile});
            for (int c = 0; c < c_aux; ++c)
                for (int y = 0; y < tile; ++y)
                    for (int x = 0; x < tile; ++x)
                        aux.data[c * tplane + y * tile + x] = stack.at(c, oy + y, ox + x);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < tile; ++y)
                    for (int x = 0; x < tile; ++x)
                        m.data[c * tplane + y * tile + x] =
                            mask_probs.data[c * plane + std::int64_t(oy + y) * W + ox + x];
            Tensor<float> probs = forward(ckpt, aux, m, mode, rng);
            const auto wx = edge_weights(tile, ox, W, overlap);
            const auto wy = edge_weights(tile, oy, H, overlap);
            for (int y = 0; y < tile; ++y)
                for (int x = 0; x < tile; ++x) {
                    const double wv = wx[std::size_t(x)] * wy[std::size_t(y)];
                    const std::int64_t q = std::int64_t(oy + y) * W + ox + x;
                    wsum.data[q] += float(wv);
                    for (int c = 0; c < C; ++c)
                        acc.data[c * plane + q] +=
                            float(wv) * probs.data[c * tplane + y * tile + x];
                }
        }
    for (std::int64_t q = 0; q < plane; ++q) {
        const float wv = wsum.data[q];
        require(wv > 0.f, "mc_predict: uncovered pixel");
        for (int c = 0; c < C; ++c) acc.data[c * plane + q] /= wv;
    }
    return acc;
}

}  // namespace

EnsembleResult mc_predict(Checkpoint<float>& ckpt, const RasterStack& stack,
                          const SparseProbMasks* masks, int n_draws, int tile,
                          int overlap, std::uint64_t seed, int threads,
                          bool deterministic) {
    require(n_draws >= 1, "mc_predict: n_draws must be >= 1");
    const int H = stack.height, W = stack.width, C = ckpt.arch.n_classes;
    require(tile % (1 << ckpt.arch.depth) == 0,
            "mc_predict: tile not divisible by 2^depth");
    require(tile <= H && tile <= W, "mc_predict: tile larger than grid");
    require(overlap >= 0 && overlap < tile, "mc_predict: overlap must be in [0,tile)");
    require(stack.channels == ckpt.arch.n_aux_channels,
            "mc_predict: stack channels != model aux channels");
    if (masks)
        require(masks->width() == W && masks->height() == H && masks->n_classes() == C,
                "mc_predict: mask grid mismatch");

    const Tensor<float> mask_probs =
        masks ? masks->probs : zero_masks<float>(1, C, H, W);
    const ForwardMode mode = deterministic ? ForwardMode::deterministic
                                           : ForwardMode::mc_sample;

    std::vector<Tensor<float>> draws(static_cast<std::size_t>(n_draws));
    const int n_threads = std::max(1, threads);
    if (n_threads == 1) {
        for (int d = 0; d < n_draws; ++d) {
            std::mt19937_64 rng(seed + std::uint64_t(d) * 0x9e3779b97f4a7c15ull);
            draws[std::size_t(d)] =
                predict_once(ckpt, stack, mask_probs, tile, overlap, mode, rng);
        }
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                // weights are immutable during inference; each draw owns its rng
                Checkpoint<float> local = ckpt;
                for (int d = next.fetch_add(1); d < n_draws; d = next.fetch_add(1)) {
                    std::mt19937_64 rng(seed + std::uint64_t(d) * 0x9e3779b97f4a7c15ull);
                    draws[std::size_t(d)] =
                        predict_once(local, stack, mask_probs, tile, overlap, mode, rng);
                }
            });
        for (auto& th : pool) th.join();
    }

    EnsembleResult res;
    res.n_draws = n_draws;
    res.constrained = masks != nullptr;
    res.mean = Tensor<float>(Shape{1, C, H, W});
    res.stddev = Tensor<float>(Shape{1, C, H, W});
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(res.mean.size());
    Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(res.mean.size());
    for (const Tensor<float>& d : draws) {
        const Eigen::ArrayXd v = d.data.cast<double>();
        sum += v;
        sq += v * v;
    }
    const Eigen::ArrayXd mean = sum / double(n_draws);
    res.mean.data = mean.cast<float>();
    res.stddev.data = (sq / double(n_draws) - mean * mean).max(0.0).sqrt().cast<float>();

    const std::int64_t plane = std::int64_t(H) * W;
    res.argmax_map.assign(std::size_t(plane), 0);
    for (std::int64_t q = 0; q < plane; ++q) {
        int best = 0;
        float bv = res.mean.data[q];
        for (int c = 1; c < C; ++c)
            if (res.mean.data[c * plane + q] > bv) {
                bv = res.mean.data[c * plane + q];
                best = c;
            }
        res.argmax_map[std::size_t(q)] = best;
    }
    return res;
}

EvalBundle evaluate(const EnsembleResult& result, const SparseProbMasks& masks,
                    const SpatialSplit& split, Role role) {
    const int W = masks.width(), H = masks.height(), C = masks.n_classes();
    require(result.mean.shape.h == H && result.mean.shape.w == W &&
                result.mean.shape.c == C,
            "evaluate: result grid mismatch");
    const std::vector<int> truth_all = argmax_labels(masks);
    std::vector<int> pred, truth;
    EvalBundle out;
    out.misclass.assign(std::size_t(H) * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::int64_t q = std::int64_t(y) * W + x;
            if (truth_all[std::size_t(q)] < 0 || split.role_at(x, y) != role) continue;
            const int p = result.argmax_map[std::size_t(q)];
            pred.push_back(p);
            truth.push_back(truth_all[std::size_t(q)]);
            out.misclass[std::size_t(q)] = (p == truth_all[std::size_t(q)]) ? 1 : 2;
        }
    if (truth.empty())
        throw NumericError("evaluate: no sampled pixels for the requested role");
    out.n_pixels = std::int64_t(truth.size());
    out.cm = confusion_matrix(pred, truth, C);
    const std::vector<double> w = inverse_frequency_weights(truth, C);
    out.weighted_acc = weighted_accuracy(pred, truth, w);
    out.per_class_acc.assign(std::size_t(C), 0.0);
    for (int c = 0; c < C; ++c) out.per_class_acc[std::size_t(c)] = out.cm.rate(c, c);
    return out;
}

}  // namespace scbn
