#pragma once

#include "scbn/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

namespace scbn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// Unrolls a single sample into a (c*kh*kw) x (oh*ow) patch matrix.
template <class S>
Mat<S> im2col(const Tensor<S>& x, int n, int kh, int kw, int stride, int pad,
              int oh, int ow) {
    const int c = x.shape.c, h = x.shape.h, w = x.shape.w;
    Mat<S> col = Mat<S>::Zero(c * kh * kw, std::int64_t(oh) * ow);
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (ci * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        col(row, oy * ow + ox) = x.at(n, ci, iy, ix);
                    }
                }
            }
    return col;
}

template <class S>
void col2im_add(const Mat<S>& col, Tensor<S>& x, int n, int kh, int kw,
                int stride, int pad, int oh, int ow) {
    const int c = x.shape.c, h = x.shape.h, w = x.shape.w;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (ci * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        x.at(n, ci, iy, ix) += col(row, oy * ow + ox);
                    }
                }
            }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: weights (kout,kin,kh,kw), bias flat of length kout.

template <class S>
Var conv2d(Graph<S>& g, Var x, Var w, Var b, int stride = 1, int pad = 0) {
    const Shape xs = g.value(x).shape;
    const Shape ws = g.value(w).shape;
    require(ws.c == xs.c, "conv2d: input channels " + std::to_string(xs.c) +
                              " != kernel in-channels " + std::to_string(ws.c));
    require(ws.h % 2 == 1 && ws.w % 2 == 1, "conv2d: kernel dims must be odd");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    require(g.value(b).size() == ws.n, "conv2d: bias length != out channels");
    const int kout = ws.n, kin = ws.c, kh = ws.h, kw = ws.w;
    const int oh = (xs.h + 2 * pad - kh) / stride + 1;
    const int ow = (xs.w + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input " + xs.str());

    Tensor<S> out(Shape{xs.n, kout, oh, ow});
    {
        Eigen::Map<const Mat<S>> wm(g.value(w).data.data(), kin * kh * kw, kout);
        for (int n = 0; n < xs.n; ++n) {
            Mat<S> col = detail::im2col(g.value(x), n, kh, kw, stride, pad, oh, ow);
            Mat<S> o = wm.transpose() * col;
            for (int k = 0; k < kout; ++k) {
                const S bias = g.value(b).data[k];
                S* dst = out.data.data() + (std::int64_t(n) * kout + k) * oh * ow;
                for (int p = 0; p < oh * ow; ++p) dst[p] = o(k, p) + bias;
            }
        }
    }

    auto back = [x, w, b, stride, pad, kin, kh, kw, oh, ow, kout](Graph<S>& gg, Var self) {
        const Tensor<S>& go = gg.grad(self);
        const Shape xs2 = gg.value(x).shape;
        Eigen::Map<const Mat<S>> wm(gg.value(w).data.data(), kin * kh * kw, kout);
        const bool need_x = gg.requires_grad(x);
        const bool need_w = gg.requires_grad(w);
        const bool need_b = gg.requires_grad(b);
        for (int n = 0; n < xs2.n; ++n) {
            Eigen::Map<const Mat<S>> gom(
                go.data.data() + std::int64_t(n) * kout * oh * ow, oh * ow, kout);
            if (need_w || need_x) {
                if (need_w) {
                    Mat<S> col = detail::im2col(gg.value(x), n, kh, kw, stride, pad, oh, ow);
                    Eigen::Map<Mat<S>> gw(gg.grad(w).data.data(), kin * kh * kw, kout);
                    gw.noalias() += col * gom;
                }
                if (need_x) {
                    Mat<S> gcol = wm * gom.transpose();  // (kin*kh*kw) x (oh*ow)
                    detail::col2im_add(gcol, gg.grad(x), n, kh, kw, stride, pad, oh, ow);
                }
            }
            if (need_b) {
                for (int k = 0; k < kout; ++k)
                    gg.grad(b).data[k] += gom.col(k).sum();
            }
        }
    };
    return g.emplace(std::move(out), {x, w, b}, back);
}

// ---------------------------------------------------------------------------
// maxpool2d: gradient routes to the argmax, ties to the first in row-major scan.

template <class S>
Var maxpool2d(Graph<S>& g, Var x, int k = 2, int stride = 2) {
    const Shape xs = g.value(x).shape;
    require(xs.h % stride == 0 && xs.w % stride == 0,
            "maxpool2d: spatial dims " + xs.str() + " not divisible by stride " +
                std::to_string(stride));
    const int oh = (xs.h - k) / stride + 1;
    const int ow = (xs.w - k) / stride + 1;
    require(oh >= 1 && ow >= 1, "maxpool2d: window larger than input");

    Tensor<S> out(Shape{xs.n, xs.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const Tensor<S>& xv = g.value(x);
    std::int64_t o = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    S best = xv.at(n, c, oy * stride, ox * stride);
                    std::int64_t bi = xv.index(n, c, oy * stride, ox * stride);
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const S v = xv.at(n, c, oy * stride + ky, ox * stride + kx);
                            if (v > best) {
                                best = v;
                                bi = xv.index(n, c, oy * stride + ky, ox * stride + kx);
                            }
                        }
                    out.data[o] = best;
                    (*argmax)[o] = bi;
                }

    auto back = [x, argmax](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        const Tensor<S>& go = gg.grad(self);
        Tensor<S>& gx = gg.grad(x);
        for (std::int64_t i = 0; i < go.size(); ++i)
            gx.data[(*argmax)[i]] += go.data[i];
    };
    return g.emplace(std::move(out), {x}, back);
}

// ---------------------------------------------------------------------------
// upsample_nearest2x: each pixel replicated into a 2x2 block.

template <class S>
Var upsample_nearest2x(Graph<S>& g, Var x) {
    const Shape xs = g.value(x).shape;
    Tensor<S> out(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
    const Tensor<S>& xv = g.value(x);
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int y = 0; y < xs.h * 2; ++y)
                for (int xx = 0; xx < xs.w * 2; ++xx)
                    out.at(n, c, y, xx) = xv.at(n, c, y / 2, xx / 2);

    auto back = [x, xs](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        const Tensor<S>& go = gg.grad(self);
        Tensor<S>& gx = gg.grad(x);
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c)
                for (int y = 0; y < xs.h * 2; ++y)
                    for (int xx = 0; xx < xs.w * 2; ++xx)
                        gx.at(n, c, y / 2, xx / 2) += go.at(n, c, y, xx);
    };
    return g.emplace(std::move(out), {x}, back);
}

// ---------------------------------------------------------------------------
// Elementwise

template <class S>
Var relu(Graph<S>& g, Var x) {
    Tensor<S> out = g.value(x);
    out.data = out.data.max(S(0));
    auto back = [x](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        gg.grad(x).data += gg.grad(self).data * (gg.value(x).data > S(0)).template cast<S>();
    };
    return g.emplace(std::move(out), {x}, back);
}

template <class S>
Var sigmoid(Graph<S>& g, Var x) {
    Tensor<S> out = g.value(x);
    out.data = S(1) / (S(1) + (-out.data).exp());
    auto back = [x](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        const auto& y = gg.value(self).data;
        gg.grad(x).data += gg.grad(self).data * y * (S(1) - y);
    };
    return g.emplace(std::move(out), {x}, back);
}

template <class S>
Var add(Graph<S>& g, Var a, Var b) {
    require(g.value(a).shape == g.value(b).shape,
            "add: shape mismatch " + g.value(a).shape.str() + " vs " + g.value(b).shape.str());
    Tensor<S> out = g.value(a);
    out.data += g.value(b).data;
    auto back = [a, b](Graph<S>& gg, Var self) {
        if (gg.requires_grad(a)) gg.grad(a).data += gg.grad(self).data;
        if (gg.requires_grad(b)) gg.grad(b).data += gg.grad(self).data;
    };
    return g.emplace(std::move(out), {a, b}, back);
}

template <class S>
Var mul(Graph<S>& g, Var a, Var b) {
    require(g.value(a).shape == g.value(b).shape,
            "mul: shape mismatch " + g.value(a).shape.str() + " vs " + g.value(b).shape.str());
    Tensor<S> out = g.value(a);
    out.data *= g.value(b).data;
    auto back = [a, b](Graph<S>& gg, Var self) {
        if (gg.requires_grad(a)) gg.grad(a).data += gg.grad(self).data * gg.value(b).data;
        if (gg.requires_grad(b)) gg.grad(b).data += gg.grad(self).data * gg.value(a).data;
    };
    return g.emplace(std::move(out), {a, b}, back);
}

template <class S>
Var scale(Graph<S>& g, Var x, S k) {
    Tensor<S> out = g.value(x);
    out.data *= k;
    auto back = [x, k](Graph<S>& gg, Var self) {
        if (gg.requires_grad(x)) gg.grad(x).data += gg.grad(self).data * k;
    };
    return g.emplace(std::move(out), {x}, back);
}

// x (n,c,h,w) scaled per pixel by a single-channel map m (n,1,h,w).
template <class S>
Var mul_bcast_channel(Graph<S>& g, Var x, Var m) {
    const Shape xs = g.value(x).shape, ms = g.value(m).shape;
    require(ms.c == 1 && ms.n == xs.n && ms.h == xs.h && ms.w == xs.w,
            "mul_bcast_channel: map shape " + ms.str() + " incompatible with " + xs.str());
    Tensor<S> out(xs);
    const std::int64_t plane = std::int64_t(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            out.data.segment((std::int64_t(n) * xs.c + c) * plane, plane) =
                g.value(x).data.segment((std::int64_t(n) * xs.c + c) * plane, plane) *
                g.value(m).data.segment(std::int64_t(n) * plane, plane);
    auto back = [x, m, xs, plane](Graph<S>& gg, Var self) {
        const Tensor<S>& go = gg.grad(self);
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                const std::int64_t off = (std::int64_t(n) * xs.c + c) * plane;
                if (gg.requires_grad(x))
                    gg.grad(x).data.segment(off, plane) +=
                        go.data.segment(off, plane) *
                        gg.value(m).data.segment(std::int64_t(n) * plane, plane);
                if (gg.requires_grad(m))
                    gg.grad(m).data.segment(std::int64_t(n) * plane, plane) +=
                        go.data.segment(off, plane) * gg.value(x).data.segment(off, plane);
            }
    };
    return g.emplace(std::move(out), {x, m}, back);
}

template <class S>
Var concat_channels(Graph<S>& g, Var a, Var b) {
    const Shape as = g.value(a).shape, bs = g.value(b).shape;
    require(as.n == bs.n && as.h == bs.h && as.w == bs.w,
            "concat_channels: batch/spatial mismatch " + as.str() + " vs " + bs.str());
    Tensor<S> out(Shape{as.n, as.c + bs.c, as.h, as.w});
    const std::int64_t plane = std::int64_t(as.h) * as.w;
    for (int n = 0; n < as.n; ++n) {
        out.data.segment(std::int64_t(n) * (as.c + bs.c) * plane, as.c * plane) =
            g.value(a).data.segment(std::int64_t(n) * as.c * plane, as.c * plane);
        out.data.segment(std::int64_t(n) * (as.c + bs.c) * plane + as.c * plane, bs.c * plane) =
            g.value(b).data.segment(std::int64_t(n) * bs.c * plane, bs.c * plane);
    }
    auto back = [a, b, as, bs, plane](Graph<S>& gg, Var self) {
        const Tensor<S>& go = gg.grad(self);
        for (int n = 0; n < as.n; ++n) {
            if (gg.requires_grad(a))
                gg.grad(a).data.segment(std::int64_t(n) * as.c * plane, as.c * plane) +=
                    go.data.segment(std::int64_t(n) * (as.c + bs.c) * plane, as.c * plane);
            if (gg.requires_grad(b))
                gg.grad(b).data.segment(std::int64_t(n) * bs.c * plane, bs.c * plane) +=
                    go.data.segment(std::int64_t(n) * (as.c + bs.c) * plane + as.c * plane,
                                    bs.c * plane);
        }
    };
    return g.emplace(std::move(out), {a, b}, back);
}

// ---------------------------------------------------------------------------
// softmax over the channel axis, per pixel.

template <class S>
Var softmax_channels(Graph<S>& g, Var x) {
    const Shape xs = g.value(x).shape;
    Tensor<S> out(xs);
    const Tensor<S>& xv = g.value(x);
    for (int n = 0; n < xs.n; ++n)
        for (int y = 0; y < xs.h; ++y)
            for (int xx = 0; xx < xs.w; ++xx) {
                S mx = xv.at(n, 0, y, xx);
                for (int c = 1; c < xs.c; ++c) mx = std::max(mx, xv.at(n, c, y, xx));
                S sum = S(0);
                for (int c = 0; c < xs.c; ++c) {
                    const S e = std::exp(xv.at(n, c, y, xx) - mx);
                    out.at(n, c, y, xx) = e;
                    sum += e;
                }
                for (int c = 0; c < xs.c; ++c) out.at(n, c, y, xx) /= sum;
            }
    auto back = [x, xs](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        const Tensor<S>& p = gg.value(self);
        const Tensor<S>& go = gg.grad(self);
        Tensor<S>& gx = gg.grad(x);
        for (int n = 0; n < xs.n; ++n)
            for (int y = 0; y < xs.h; ++y)
                for (int xx = 0; xx < xs.w; ++xx) {
                    S dot = S(0);
                    for (int c = 0; c < xs.c; ++c)
                        dot += go.at(n, c, y, xx) * p.at(n, c, y, xx);
                    for (int c = 0; c < xs.c; ++c)
                        gx.at(n, c, y, xx) +=
                            p.at(n, c, y, xx) * (go.at(n, c, y, xx) - dot);
                }
    };
    return g.emplace(std::move(out), {x}, back);
}

// ---------------------------------------------------------------------------
// batchnorm2d. gamma/beta are graph vars of length C; running stats live
// outside the graph and are updated in training mode (momentum 0.9).

template <class S>
Var batchnorm2d(Graph<S>& g, Var x, Var gamma, Var beta, Tensor<S>& running_mean,
                Tensor<S>& running_var, bool training, S momentum = S(0.9),
                S eps = S(1e-5)) {
    const Shape xs = g.value(x).shape;
    require(xs.n > 0, "batchnorm2d: zero-size batch");
    require(g.value(gamma).size() == xs.c && g.value(beta).size() == xs.c &&
                running_mean.size() == xs.c && running_var.size() == xs.c,
            "batchnorm2d: parameter length != channels");

    const std::int64_t plane = std::int64_t(xs.h) * xs.w;
    const std::int64_t m = std::int64_t(xs.n) * plane;  // elements per channel
    Tensor<S> out(xs);
    auto mean = std::make_shared<std::vector<S>>(xs.c);
    auto invstd = std::make_shared<std::vector<S>>(xs.c);
    const Tensor<S>& xv = g.value(x);

    for (int c = 0; c < xs.c; ++c) {
        S mu, iv;
        if (training) {
            S sum = S(0), sq = S(0);
            for (int n = 0; n < xs.n; ++n) {
                auto seg = xv.data.segment((std::int64_t(n) * xs.c + c) * plane, plane);
                sum += seg.sum();
                sq += (seg * seg).sum();
            }
            mu = sum / S(m);
            S var = sq / S(m) - mu * mu;
            if (var < S(0)) var = S(0);
            running_mean.data[c] = momentum * running_mean.data[c] + (S(1) - momentum) * mu;
            running_var.data[c] = momentum * running_var.data[c] + (S(1) - momentum) * var;
            iv = S(1) / std::sqrt(var + eps);
        } else {
            mu = running_mean.data[c];
            iv = S(1) / std::sqrt(running_var.data[c] + eps);
        }
        (*mean)[c] = mu;
        (*invstd)[c] = iv;
        const S gm = g.value(gamma).data[c], bt = g.value(beta).data[c];
        for (int n = 0; n < xs.n; ++n) {
            const std::int64_t off = (std::int64_t(n) * xs.c + c) * plane;
            out.data.segment(off, plane) =
                (xv.data.segment(off, plane) - mu) * iv * gm + bt;
        }
    }

    auto back = [x, gamma, beta, xs, plane, m, mean, invstd, training](Graph<S>& gg, Var self) {
        const Tensor<S>& go = gg.grad(self);
        const Tensor<S>& xv2 = gg.value(x);
        for (int c = 0; c < xs.c; ++c) {
            const S mu = (*mean)[c], iv = (*invstd)[c];
            const S gm = gg.value(gamma).data[c];
            // accumulate sums over the channel
            S sum_dy = S(0), sum_dy_xhat = S(0);
            for (int n = 0; n < xs.n; ++n) {
                const std::int64_t off = (std::int64_t(n) * xs.c + c) * plane;
                auto dy = go.data.segment(off, plane);
                auto xhat = (xv2.data.segment(off, plane) - mu) * iv;
                sum_dy += dy.sum();
                sum_dy_xhat += (dy * xhat).sum();
            }
            if (gg.requires_grad(gamma)) gg.grad(gamma).data[c] += sum_dy_xhat;
            if (gg.requires_grad(beta)) gg.grad(beta).data[c] += sum_dy;
            if (gg.requires_grad(x)) {
                for (int n = 0; n < xs.n; ++n) {
                    const std::int64_t off = (std::int64_t(n) * xs.c + c) * plane;
                    auto dy = go.data.segment(off, plane);
                    auto xhat = (xv2.data.segment(off, plane) - mu) * iv;
                    if (training) {
                        gg.grad(x).data.segment(off, plane) +=
                            gm * iv *
                            (dy - sum_dy / S(m) - xhat * (sum_dy_xhat / S(m)));
                    } else {
                        gg.grad(x).data.segment(off, plane) += gm * iv * dy;
                    }
                }
            }
        }
    };
    return g.emplace(std::move(out), {x, gamma, beta}, back);
}

// ---------------------------------------------------------------------------
// Grayscale dilation: per-channel max over a k x k window clipped at the
// border. k = 1 is the identity. Gradient routes to the argmax like maxpool.

template <class S>
Var dilate(Graph<S>& g, Var x, int k) {
    require(k >= 1 && k % 2 == 1, "dilate: filter size must be odd, got " + std::to_string(k));
    const Shape xs = g.value(x).shape;
    if (k == 1) {
        Tensor<S> out = g.value(x);
        auto back = [x](Graph<S>& gg, Var self) {
            if (gg.requires_grad(x)) gg.grad(x).data += gg.grad(self).data;
        };
        return g.emplace(std::move(out), {x}, back);
    }
    const int r = k / 2;
    Tensor<S> out(xs);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const Tensor<S>& xv = g.value(x);
    std::int64_t o = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int y = 0; y < xs.h; ++y)
                for (int xx = 0; xx < xs.w; ++xx, ++o) {
                    S best = xv.at(n, c, y, xx);
                    std::int64_t bi = xv.index(n, c, y, xx);
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= xs.h) continue;
                        for (int dx = -r; dx <= r; ++dx) {
                            const int xq = xx + dx;
                            if (xq < 0 || xq >= xs.w) continue;
                            const S v = xv.at(n, c, yy, xq);
                            if (v > best) {
                                best = v;
                                bi = xv.index(n, c, yy, xq);
                            }
                        }
                    }
                    out.data[o] = best;
                    (*argmax)[o] = bi;
                }
    auto back = [x, argmax](Graph<S>& gg, Var self) {
        if (!gg.requires_grad(x)) return;
        const Tensor<S>& go = gg.grad(self);
        Tensor<S>& gx = gg.grad(x);
        for (std::int64_t i = 0; i < go.size(); ++i)
            gx.data[(*argmax)[i]] += go.data[i];
    };
    return g.emplace(std::move(out), {x}, back);
}

// ---------------------------------------------------------------------------
// sum of all elements, as a scalar node.

template <class S>
Var sum_all(Graph<S>& g, Var x) {
    Tensor<S> out(Shape{1, 1, 1, 1});
    out.data[0] = g.value(x).data.sum();
    auto back = [x](Graph<S>& gg, Var self) {
        if (gg.requires_grad(x)) gg.grad(x).data += gg.grad(self).data[0];
    };
    return g.emplace(std::move(out), {x}, back);
}

}  // namespace scbn
