#pragma once

#include "scbn/geodata.hpp"
#include "scbn/metrics.hpp"
#include "scbn/model.hpp"

namespace scbn {

struct EnsembleResult {
    Tensor<float> mean;    // (1,C,H,W), channel-sums to 1 per pixel
    Tensor<float> stddev;  // (1,C,H,W), population formula
    std::vector<int> argmax_map;  // row-major H*W, argmax of mean
    int n_draws = 0;
    bool constrained = false;
};

// Monte Carlo dropout ensemble over the full raster, processed in overlapping
// tiles blended by cosine-ramp weights. masks == nullptr uses zeroed masks
// (unconstrained prediction). deterministic disables dropout, for which every
// draw is identical.
EnsembleResult mc_predict(Checkpoint<float>& ckpt, const RasterStack& stack,
                          const SparseProbMasks* masks, int n_draws, int tile,
                          int overlap, std::uint64_t seed, int threads = 1,
                          bool deterministic = false);

struct EvalBundle {
    ConfusionMatrix cm;
    double weighted_acc = 0.0;
    std::vector<double> per_class_acc;
    // 0 = unsampled, 1 = correct, 2 = incorrect, row-major H*W
    std::vector<std::uint8_t> misclass;
    std::int64_t n_pixels = 0;
};

EvalBundle evaluate(const EnsembleResult& result, const SparseProbMasks& masks,
                    const SpatialSplit& split, Role role);

}  // namespace scbn
