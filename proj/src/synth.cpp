#include "scbn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace scbn {

namespace {

// Class mean vectors with pairwise distance >= separation: random directions,
// rescaled so the closest pair sits exactly at the separation.
std::vector<std::vector<double>> class_means(int n_classes, int n_aux, double sep,
                                             std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> mu(n_classes, std::vector<double>(n_aux));
    double min_d = 0.0;
    do {
        for (auto& m : mu)
            for (double& v : m) v = gauss(rng);
        min_d = 1e300;
        for (int a = 0; a < n_classes; ++a)
            for (int b = a + 1; b < n_classes; ++b) {
                double d = 0;
                for (int c = 0; c < n_aux; ++c)
                    d += (mu[a][c] - mu[b][c]) * (mu[a][c] - mu[b][c]);
                min_d = std::min(min_d, std::sqrt(d));
            }
    } while (min_d < 1e-6);
    const double k = sep / min_d;
    for (auto& m : mu)
        for (double& v : m) v *= k;
    return mu;
}

}  // namespace

SynthDataset gen_dataset(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int w = cfg.width, h = cfg.height;
    const std::int64_t plane = std::int64_t(h) * w;

    // Voronoi sites, one or more regions per class
    const int n_sites = cfg.n_classes * std::max(1, cfg.sites_per_class);
    std::uniform_real_distribution<double> ux(0.0, double(w)), uy(0.0, double(h));
    std::vector<double> sx(n_sites), sy(n_sites);
    std::vector<int> site_class(n_sites);
    for (int i = 0; i < n_sites; ++i) {
        sx[i] = ux(rng);
        sy[i] = uy(rng);
        site_class[i] = i % cfg.n_classes;
    }

    SynthDataset out;
    out.truth.assign(std::size_t(plane), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = 1e300;
            int bi = 0;
            for (int i = 0; i < n_sites; ++i) {
                const double d = (x - sx[i]) * (x - sx[i]) + (y - sy[i]) * (y - sy[i]);
                if (d < best) {
                    best = d;
                    bi = i;
                }
            }
            out.truth[std::size_t(y) * w + x] = site_class[bi];
        }

    const auto mu = class_means(cfg.n_classes, cfg.n_aux, cfg.separation, rng);

    // Aux channels: class mean + a few low-frequency sinusoids + white noise
    out.stack.width = w;
    out.stack.height = h;
    out.stack.channels = cfg.n_aux;
    out.stack.data = Tensor<float>(Shape{1, cfg.n_aux, h, w});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
    for (int c = 0; c < cfg.n_aux; ++c) {
        out.stack.names.push_back("AUX" + std::to_string(c));
        const double fx = 1.0 + (rng() % 3), fy = 1.0 + (rng() % 3);
        const double p1 = uphase(rng), p2 = uphase(rng);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int cls = out.truth[std::size_t(y) * w + x];
                const double smooth =
                    cfg.smooth_amp * (std::sin(2.0 * M_PI * fx * x / w + p1) +
                                      std::cos(2.0 * M_PI * fy * y / h + p2)) * 0.5;
                out.stack.at(c, y, x) =
                    float(mu[cls][c] + smooth + cfg.noise_std * gauss(rng));
            }
    }
    zscore_normalize(out.stack);

    // Field samples: uniform without replacement
    std::vector<std::int64_t> order(std::size_t(plane), 0);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < cfg.n_samples; ++i) {
        const std::int64_t q = order[std::size_t(i)];
        SampleTable::Row r;
        r.x = int(q % w);
        r.y = int(q / w);
        r.code = "S" + std::to_string(out.truth[std::size_t(q)]);
        out.samples.rows.push_back(r);
    }
    for (int c = 0; c < cfg.n_classes; ++c) out.vocab.push_back("S" + std::to_string(c));
    return out;
}

}  // namespace scbn
