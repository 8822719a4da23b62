#include "scbn/metrics.hpp"

#include <cmath>

namespace scbn {

std::vector<double> inverse_frequency_weights(const std::vector<int>& labels, int n_classes) {
    require(n_classes >= 1, "inverse_frequency_weights: need n_classes >= 1");
    std::vector<std::int64_t> counts(n_classes, 0);
    for (int l : labels) {
        require(l >= 0 && l < n_classes, "label out of range");
        ++counts[l];
    }
    std::vector<double> w(n_classes, 0.0);
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c)
        if (counts[c] > 0) {
            w[c] = 1.0 / double(counts[c]);
            sum += w[c];
            ++present;
        }
    if (present == 0) return w;
    // normalize to mean 1 over the present classes
    for (int c = 0; c < n_classes; ++c) w[c] *= double(present) / sum;
    return w;
}

double weighted_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                         const std::vector<double>& class_weights) {
    require(!truth.empty(), "weighted_accuracy: empty input");
    require(pred.size() == truth.size(), "weighted_accuracy: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double w = class_weights[truth[i]];
        den += w;
        if (pred[i] == truth[i]) num += w;
    }
    return den > 0.0 ? num / den : 0.0;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& pred,
                                 const std::vector<int>& truth, int n_classes) {
    require(pred.size() == truth.size(), "confusion_matrix: length mismatch");
    ConfusionMatrix cm;
    cm.n_classes = n_classes;
    cm.counts.assign(std::size_t(n_classes) * n_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] >= 0 && truth[i] < n_classes && pred[i] >= 0 && pred[i] < n_classes,
                "confusion_matrix: label out of range");
        ++cm.counts[std::size_t(truth[i]) * n_classes + pred[i]];
    }
    cm.rates.assign(cm.counts.size(), 0.0);
    for (int t = 0; t < n_classes; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < n_classes; ++p) row += cm.count(t, p);
        if (row == 0) continue;
        for (int p = 0; p < n_classes; ++p)
            cm.rates[std::size_t(t) * n_classes + p] = double(cm.count(t, p)) / double(row);
    }
    return cm;
}

namespace {

std::vector<double> gaussian_kernel_11(double sigma) {
    std::vector<double> k(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable Gaussian filter with border-renormalized (clipped) windows.
void gauss_filter(const float* src, double* dst, int h, int w,
                  const std::vector<double>& k) {
    std::vector<double> tmp(std::size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0, wsum = 0.0;
            for (int d = -5; d <= 5; ++d) {
                const int xx = x + d;
                if (xx < 0 || xx >= w) continue;
                s += k[d + 5] * src[y * w + xx];
                wsum += k[d + 5];
            }
            tmp[std::size_t(y) * w + x] = s / wsum;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0, wsum = 0.0;
            for (int d = -5; d <= 5; ++d) {
                const int yy = y + d;
                if (yy < 0 || yy >= h) continue;
                s += k[d + 5] * tmp[std::size_t(yy) * w + x];
                wsum += k[d + 5];
            }
            dst[std::size_t(y) * w + x] = s / wsum;
        }
}

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    require(a.shape == b.shape, "ssim: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    const int n = std::max(1, a.shape.n), c = a.shape.c, h = a.shape.h, w = a.shape.w;
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto kern = gaussian_kernel_11(1.5);
    const std::size_t plane = std::size_t(h) * w;

    std::vector<double> mu_a(plane), mu_b(plane), m_aa(plane), m_bb(plane), m_ab(plane);
    std::vector<float> aa(plane), bb(plane), ab(plane);

    double total = 0.0;
    int planes = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci, ++planes) {
            const float* pa = a.data.data() + (std::size_t(ni) * c + ci) * plane;
            const float* pb = b.data.data() + (std::size_t(ni) * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                aa[i] = pa[i] * pa[i];
                bb[i] = pb[i] * pb[i];
                ab[i] = pa[i] * pb[i];
            }
            gauss_filter(pa, mu_a.data(), h, w, kern);
            gauss_filter(pb, mu_b.data(), h, w, kern);
            gauss_filter(aa.data(), m_aa.data(), h, w, kern);
            gauss_filter(bb.data(), m_bb.data(), h, w, kern);
            gauss_filter(ab.data(), m_ab.data(), h, w, kern);
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double va = m_aa[i] - mu_a[i] * mu_a[i];
                const double vb = m_bb[i] - mu_b[i] * mu_b[i];
                const double cov = m_ab[i] - mu_a[i] * mu_b[i];
                s += (2.0 * mu_a[i] * mu_b[i] + C1) * (2.0 * cov + C2) /
                     ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
            }
            total += s / double(plane);
        }
    return total / double(planes);
}

}  // namespace scbn
