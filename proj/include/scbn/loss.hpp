#pragma once

#include "scbn/ops.hpp"

#include <vector>

namespace scbn {

template <class S>
struct FocalLossConfig {
    S gamma = S(2);
    std::vector<S> class_weights;  // one positive weight per class

    void validate(int n_classes) const {
        require(gamma >= S(0), "focal loss: gamma must be >= 0");
        require(int(class_weights.size()) == n_classes,
                "focal loss: class_weights length != n_classes");
        for (S w : class_weights) require(w > S(0), "focal loss: class weights must be > 0");
    }
};

template <class S>
struct DilationSchedule {
    std::vector<int> filter_sizes{1, 3, 5, 11};
    std::vector<S> weights{S(0.2), S(0.3), S(0.25), S(0.25)};

    void validate() const {
        require(filter_sizes.size() == weights.size() && !filter_sizes.empty(),
                "dilation schedule: sizes/weights length mismatch");
        S sum = S(0);
        int prev = 0;
        for (std::size_t i = 0; i < filter_sizes.size(); ++i) {
            require(filter_sizes[i] % 2 == 1, "dilation schedule: filter sizes must be odd");
            require(filter_sizes[i] > prev, "dilation schedule: filter sizes must ascend");
            prev = filter_sizes[i];
            sum += weights[i];
        }
        require(std::abs(double(sum) - 1.0) < 1e-9, "dilation schedule: weights must sum to 1");
    }
};

// Plain (non-graph) grayscale dilation with border-clipped windows.
template <class S>
Tensor<S> dilate_plain(const Tensor<S>& x, int k) {
    require(k >= 1 && k % 2 == 1, "dilate: filter size must be odd, got " + std::to_string(k));
    if (k == 1) return x;
    const Shape s = x.shape;
    const int r = k / 2;
    Tensor<S> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    S best = x.at(n, c, y, xx);
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= s.h) continue;
                        for (int dx = -r; dx <= r; ++dx) {
                            const int xq = xx + dx;
                            if (xq < 0 || xq >= s.w) continue;
                            best = std::max(best, x.at(n, c, yy, xq));
                        }
                    }
                    out.at(n, c, y, xx) = best;
                }
    return out;
}

// Focal categorical cross-entropy over the valid pixels, averaged by their
// count. pred is a graph var of per-pixel probabilities; target and valid are
// fixed tensors (target channel-sums to 1 on valid pixels, 0 elsewhere).
template <class S>
Var fcce(Graph<S>& g, Var pred, const Tensor<S>& target, const Tensor<S>& valid,
         const FocalLossConfig<S>& cfg) {
    const Shape ps = g.value(pred).shape;
    require(target.shape == ps, "fcce: target shape " + target.shape.str() +
                                    " != pred shape " + ps.str());
    require(valid.shape.n == ps.n && valid.shape.c == 1 && valid.shape.h == ps.h &&
                valid.shape.w == ps.w,
            "fcce: valid mask shape " + valid.shape.str() + " incompatible");
    cfg.validate(ps.c);

    const S lo = S(1e-7), hi = S(1) - S(1e-7);
    const std::int64_t plane = std::int64_t(ps.h) * ps.w;

    std::int64_t n_valid = 0;
    for (std::int64_t i = 0; i < valid.size(); ++i)
        if (valid.data[i] > S(0.5)) ++n_valid;
    if (n_valid == 0) throw NumericError("fcce: no supervision pixels");

    const Tensor<S>& p = g.value(pred);
    double acc = 0.0;
    for (int n = 0; n < ps.n; ++n)
        for (std::int64_t q = 0; q < plane; ++q) {
            if (valid.data[std::int64_t(n) * plane + q] <= S(0.5)) continue;
            for (int c = 0; c < ps.c; ++c) {
                const std::int64_t i = (std::int64_t(n) * ps.c + c) * plane + q;
                const S y = target.data[i];
                if (y == S(0)) continue;
                S pv = std::min(hi, std::max(lo, p.data[i]));
                acc -= double(cfg.class_weights[c]) * double(y) *
                       std::pow(1.0 - double(pv), double(cfg.gamma)) * std::log(double(pv));
            }
        }
    Tensor<S> out(Shape{1, 1, 1, 1});
    out.data[0] = S(acc / double(n_valid));

    auto tgt = std::make_shared<Tensor<S>>(target);
    auto vld = std::make_shared<Tensor<S>>(valid);
    auto back = [pred, tgt, vld, cfg, ps, plane, n_valid, lo, hi](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(pred)) return;
        const S up = gg.grad(self).data[0];
        const Tensor<S>& p2 = gg.value(pred);
        Tensor<S>& gp = gg.grad(pred);
        const S inv_n = S(1) / S(n_valid);
        for (int n = 0; n < ps.n; ++n)
            for (std::int64_t q = 0; q < plane; ++q) {
                if (vld->data[std::int64_t(n) * plane + q] <= S(0.5)) continue;
                for (int c = 0; c < ps.c; ++c) {
                    const std::int64_t i = (std::int64_t(n) * ps.c + c) * plane + q;
                    const S y = tgt->data[i];
                    if (y == S(0)) continue;
                    const S pv = p2.data[i];
                    if (pv <= lo || pv >= hi) continue;  // clamped: zero slope
                    const double om = 1.0 - double(pv);
                    double d = std::pow(om, double(cfg.gamma)) / double(pv);
                    if (cfg.gamma > S(0))
                        d -= double(cfg.gamma) * std::pow(om, double(cfg.gamma) - 1.0) *
                             std::log(double(pv));
                    gp.data[i] += up * S(-double(cfg.class_weights[c]) * double(y) * d) * inv_n;
                }
            }
    };
    return g.emplace(std::move(out), {pred}, back);
}

// Renormalizes a dilated sparse target so every pixel on the dilated valid
// support channel-sums to 1.
template <class S>
Tensor<S> renorm_target(const Tensor<S>& target, const Tensor<S>& valid) {
    const Shape s = target.shape;
    const std::int64_t plane = std::int64_t(s.h) * s.w;
    Tensor<S> out(s);
    for (int n = 0; n < s.n; ++n)
        for (std::int64_t q = 0; q < plane; ++q) {
            if (valid.data[std::int64_t(n) * plane + q] <= S(0.5)) continue;
            S sum = S(0);
            for (int c = 0; c < s.c; ++c)
                sum += target.data[(std::int64_t(n) * s.c + c) * plane + q];
            if (sum <= S(0)) continue;
            for (int c = 0; c < s.c; ++c) {
                const std::int64_t i = (std::int64_t(n) * s.c + c) * plane + q;
                out.data[i] = target.data[i] / sum;
            }
        }
    return out;
}

// Weighted sum over the dilation schedule of fcce between the dilated
// prediction and the renormalized dilated sparse target.
template <class S>
Var dilated_fcce(Graph<S>& g, Var pred, const Tensor<S>& sparse_target,
                 const Tensor<S>& valid, const DilationSchedule<S>& sched,
                 const FocalLossConfig<S>& cfg) {
    sched.validate();
    Var total = -1;
    for (std::size_t i = 0; i < sched.filter_sizes.size(); ++i) {
        const int k = sched.filter_sizes[i];
        Var dp = dilate(g, pred, k);
        Tensor<S> dv = dilate_plain(valid, k);
        Tensor<S> dt = renorm_target(dilate_plain(sparse_target, k), dv);
        Var lk = scale(g, fcce(g, dp, dt, dv, cfg), sched.weights[i]);
        total = (total < 0) ? lk : add(g, total, lk);
    }
    return total;
}

}  // namespace scbn
