#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scbn/gradcheck.hpp"
#include "scbn/loss.hpp"
#include "scbn/metrics.hpp"

#include <random>

using namespace scbn;

namespace {

template <class S>
Tensor<S> randt(Shape s, unsigned seed, S stddev = S(1)) {
    std::mt19937_64 rng(seed);
    return Tensor<S>::randn(s, rng, stddev);
}

// Random per-pixel probability distribution over channels.
template <class S>
Tensor<S> rand_probs(Shape s, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Tensor<S> t(s);
    const std::int64_t plane = std::int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (std::int64_t q = 0; q < plane; ++q) {
            double sum = 0;
            for (int c = 0; c < s.c; ++c) {
                const double v = u(rng);
                t.data[(std::int64_t(n) * s.c + c) * plane + q] = S(v);
                sum += v;
            }
            for (int c = 0; c < s.c; ++c)
                t.data[(std::int64_t(n) * s.c + c) * plane + q] /= S(sum);
        }
    return t;
}

// One-hot targets on a random subset of pixels, plus the matching valid mask.
template <class S>
std::pair<Tensor<S>, Tensor<S>> rand_targets(Shape s, unsigned seed, double fill = 0.4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, s.c - 1);
    Tensor<S> target(s);
    Tensor<S> valid(Shape{s.n, 1, s.h, s.w});
    const std::int64_t plane = std::int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (std::int64_t q = 0; q < plane; ++q)
            if (u(rng) < fill) {
                valid.data[std::int64_t(n) * plane + q] = S(1);
                target.data[(std::int64_t(n) * s.c + cls(rng)) * plane + q] = S(1);
            }
    return {target, valid};
}

// Independent scalar oracle for the focal loss.
template <class S>
double fcce_oracle(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& valid,
                   double gamma, const std::vector<double>& w) {
    const Shape s = pred.shape;
    const std::int64_t plane = std::int64_t(s.h) * s.w;
    double acc = 0;
    std::int64_t n_valid = 0;
    for (int n = 0; n < s.n; ++n)
        for (std::int64_t q = 0; q < plane; ++q) {
            if (valid.data[std::int64_t(n) * plane + q] <= S(0.5)) continue;
            ++n_valid;
            for (int c = 0; c < s.c; ++c) {
                const std::int64_t i = (std::int64_t(n) * s.c + c) * plane + q;
                const double y = double(target.data[i]);
                if (y == 0.0) continue;
                double p = std::min(1.0 - 1e-7, std::max(1e-7, double(pred.data[i])));
                acc -= w[std::size_t(c)] * y * std::pow(1.0 - p, gamma) * std::log(p);
            }
        }
    return acc / double(n_valid);
}

template <class S>
FocalLossConfig<S> cfg_for(int n_classes, double gamma) {
    FocalLossConfig<S> cfg;
    cfg.gamma = S(gamma);
    cfg.class_weights.assign(std::size_t(n_classes), S(1));
    return cfg;
}

}  // namespace

TEST_CASE("fcce is near zero for a perfect prediction") {
    const Shape s{1, 3, 6, 6};
    auto [target, valid] = rand_targets<double>(s, 1);
    Tensor<double> pred = target;
    // off-support channels get the residual probability mass
    const std::int64_t plane = 36;
    for (std::int64_t q = 0; q < plane; ++q) {
        if (valid.data[q] <= 0.5) continue;
        for (int c = 0; c < 3; ++c) {
            double& v = pred.data[c * plane + q];
            v = v > 0.5 ? 1.0 - 2e-7 : 1e-7;
        }
    }
    Graph<double> g;
    Var l = fcce(g, g.constant(pred), target, valid, cfg_for<double>(3, 2.0));
    CHECK(g.value(l).data[0] < 1e-5);
    CHECK(g.value(l).data[0] >= 0.0);
}

TEST_CASE("fcce hand-computed single pixel") {
    // p = 0.5 on the true class, gamma 2: (1-0.5)^2 * (-ln 0.5) = 0.25 ln 2
    Tensor<double> pred(Shape{1, 2, 1, 1});
    pred.data[0] = 0.5;
    pred.data[1] = 0.5;
    Tensor<double> target(Shape{1, 2, 1, 1});
    target.data[0] = 1.0;
    Tensor<double> valid = Tensor<double>::full({1, 1, 1, 1}, 1.0);
    Graph<double> g;
    Var l = fcce(g, g.constant(pred), target, valid, cfg_for<double>(2, 2.0));
    CHECK(g.value(l).data[0] == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-9));
    CHECK(g.value(l).data[0] == doctest::Approx(0.173286795).epsilon(1e-6));
}

TEST_CASE("fcce at gamma 0 matches plain cross-entropy") {
    const Shape s{2, 4, 8, 8};
    Tensor<double> pred = rand_probs<double>(s, 3);
    auto [target, valid] = rand_targets<double>(s, 4);
    Graph<double> g;
    Var l = fcce(g, g.constant(pred), target, valid, cfg_for<double>(4, 0.0));
    const double oracle = fcce_oracle(pred, target, valid, 0.0, {1, 1, 1, 1});
    CHECK(std::abs(g.value(l).data[0] - oracle) < 1e-12);
}

TEST_CASE("fcce matches the loop oracle at gamma 2 with class weights") {
    const Shape s{2, 3, 8, 8};
    Tensor<double> pred = rand_probs<double>(s, 5);
    auto [target, valid] = rand_targets<double>(s, 6);
    FocalLossConfig<double> cfg;
    cfg.gamma = 2.0;
    cfg.class_weights = {0.5, 1.5, 2.0};
    Graph<double> g;
    Var l = fcce(g, g.constant(pred), target, valid, cfg);
    CHECK(std::abs(g.value(l).data[0] -
                   fcce_oracle(pred, target, valid, 2.0, {0.5, 1.5, 2.0})) < 1e-12);
}

TEST_CASE("fcce rejects an all-invalid mask") {
    const Shape s{1, 2, 4, 4};
    Graph<double> g;
    CHECK_THROWS_WITH_AS(fcce(g, g.constant(rand_probs<double>(s, 7)), Tensor<double>(s),
                              Tensor<double>(Shape{1, 1, 4, 4}), cfg_for<double>(2, 2.0)),
                         doctest::Contains("no supervision pixels"), NumericError);
}

TEST_CASE("fcce gradient passes finite differences at gamma 2") {
    const Shape s{1, 3, 5, 5};
    auto [target, valid] = rand_targets<double>(s, 8);
    auto fn = [&, t = target, v = valid](Graph<double>& g, Var x) {
        return fcce(g, softmax_channels(g, x), t, v, cfg_for<double>(3, 2.0));
    };
    auto rep = grad_check(fn, randt<double>(s, 9, 0.5), 1e-5);
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("fcce is equivariant under class permutation") {
    const Shape s{1, 3, 6, 6};
    Tensor<double> pred = rand_probs<double>(s, 10);
    auto [target, valid] = rand_targets<double>(s, 11);
    const int perm[3] = {2, 0, 1};
    const std::int64_t plane = 36;
    Tensor<double> pred_p(s), target_p(s);
    for (int c = 0; c < 3; ++c) {
        pred_p.data.segment(perm[c] * plane, plane) = pred.data.segment(c * plane, plane);
        target_p.data.segment(perm[c] * plane, plane) = target.data.segment(c * plane, plane);
    }
    Graph<double> g;
    Var a = fcce(g, g.constant(pred), target, valid, cfg_for<double>(3, 2.0));
    Var b = fcce(g, g.constant(pred_p), target_p, valid, cfg_for<double>(3, 2.0));
    CHECK(g.value(a).data[0] == doctest::Approx(g.value(b).data[0]).epsilon(1e-14));
}

TEST_CASE("dilate_plain identity, center pixel and zero map") {
    Tensor<float> x(Shape{1, 1, 5, 5});
    x.at(0, 0, 2, 2) = 1.f;
    CHECK((dilate_plain(x, 1).data == x.data).all());

    Tensor<float> d3 = dilate_plain(x, 3);
    for (int y = 0; y < 5; ++y)
        for (int xx = 0; xx < 5; ++xx) {
            const bool in = std::abs(y - 2) <= 1 && std::abs(xx - 2) <= 1;
            CHECK(d3.at(0, 0, y, xx) == (in ? 1.f : 0.f));
        }

    Tensor<float> z(Shape{1, 2, 4, 4});
    CHECK((dilate_plain(z, 5).data == 0.f).all());
}

TEST_CASE("dilate_plain is extensive and monotone in the filter size") {
    Tensor<float> x = randt<float>({1, 2, 9, 9}, 12);
    Tensor<float> d3 = dilate_plain(x, 3);
    Tensor<float> d5 = dilate_plain(x, 5);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        CHECK(d3.data[i] >= x.data[i]);
        CHECK(d5.data[i] >= d3.data[i]);
    }
}

TEST_CASE("graph dilate matches dilate_plain and k=1 is exact identity") {
    Tensor<float> x = randt<float>({2, 2, 7, 7}, 13);
    Graph<float> g;
    Var xv = g.constant(x);
    for (int k : {1, 3, 5, 11}) {
        Var d = dilate(g, xv, k);
        Tensor<float> o = dilate_plain(x, k);
        CHECK((g.value(d).data == o.data).all());
    }
}

TEST_CASE("renorm_target yields unit channel sums on the valid support") {
    const Shape s{1, 3, 8, 8};
    auto [target, valid] = rand_targets<float>(s, 14, 0.3);
    Tensor<float> dv = dilate_plain(valid, 5);
    Tensor<float> dt = renorm_target(dilate_plain(target, 5), dv);
    const std::int64_t plane = 64;
    for (std::int64_t q = 0; q < plane; ++q) {
        float sum = 0;
        for (int c = 0; c < 3; ++c) sum += dt.data[c * plane + q];
        if (dv.data[q] > 0.5f)
            CHECK(sum == doctest::Approx(1.f).epsilon(1e-5));
        else
            CHECK(sum == 0.f);
    }
}

TEST_CASE("dilated_fcce with a degenerate schedule equals fcce") {
    const Shape s{1, 3, 8, 8};
    Tensor<double> pred = rand_probs<double>(s, 15);
    auto [target, valid] = rand_targets<double>(s, 16);
    DilationSchedule<double> sched;
    sched.filter_sizes = {1};
    sched.weights = {1.0};
    Graph<double> g;
    Var a = dilated_fcce(g, g.constant(pred), target, valid, sched, cfg_for<double>(3, 2.0));
    Var b = fcce(g, g.constant(pred), renorm_target(target, valid), valid,
                 cfg_for<double>(3, 2.0));
    CHECK(std::abs(g.value(a).data[0] - g.value(b).data[0]) <= 1e-10);
}

TEST_CASE("dilated_fcce matches an independent per-term oracle") {
    const Shape s{2, 3, 12, 12};
    Tensor<double> pred = rand_probs<double>(s, 17);
    auto [target, valid] = rand_targets<double>(s, 18, 0.2);
    DilationSchedule<double> sched;  // defaults: {1,3,5,11} x {0.2,0.3,0.25,0.25}
    FocalLossConfig<double> cfg = cfg_for<double>(3, 2.0);

    double oracle = 0;
    for (std::size_t i = 0; i < sched.filter_sizes.size(); ++i) {
        const int k = sched.filter_sizes[i];
        Tensor<double> dp = dilate_plain(pred, k);
        Tensor<double> dv = dilate_plain(valid, k);
        Tensor<double> dt = renorm_target(dilate_plain(target, k), dv);
        oracle += sched.weights[i] * fcce_oracle(dp, dt, dv, 2.0, {1, 1, 1});
    }
    Graph<double> g;
    Var l = dilated_fcce(g, g.constant(pred), target, valid, sched, cfg);
    CHECK(std::abs(g.value(l).data[0] - oracle) <= 1e-10);
}

TEST_CASE("dilation schedule validation") {
    DilationSchedule<float> s;
    CHECK_NOTHROW(s.validate());
    s.weights = {0.5f, 0.3f, 0.25f, 0.25f};
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("sum to 1"), ShapeError);
    s = DilationSchedule<float>{};
    s.filter_sizes = {1, 4, 5, 11};
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("odd"), ShapeError);
    s = DilationSchedule<float>{};
    s.filter_sizes = {3, 1, 5, 11};
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("ascend"), ShapeError);
}

TEST_CASE("weighted accuracy basics") {
    std::vector<double> w1{1.0, 1.0};
    CHECK(weighted_accuracy({0, 1, 0}, {0, 1, 0}, w1) == doctest::Approx(1.0));
    CHECK(weighted_accuracy({1, 0, 1}, {0, 1, 0}, w1) == doctest::Approx(0.0));

    // 90/10 imbalance, always predicting the majority: inverse-frequency
    // weights score it at one half
    std::vector<int> truth(100, 0), pred(100, 0);
    for (int i = 0; i < 10; ++i) truth[std::size_t(i)] = 1;
    const std::vector<double> w = inverse_frequency_weights(truth, 2);
    CHECK(weighted_accuracy(pred, truth, w) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("weighted accuracy is invariant under sample duplication") {
    std::vector<int> truth{0, 0, 1, 2, 2, 2}, pred{0, 1, 1, 2, 0, 2};
    std::vector<double> w{1.0, 2.0, 0.5};
    const double base = weighted_accuracy(pred, truth, w);
    std::vector<int> t2 = truth, p2 = pred;
    t2.insert(t2.end(), truth.begin(), truth.end());
    p2.insert(p2.end(), pred.begin(), pred.end());
    CHECK(weighted_accuracy(p2, t2, w) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("inverse frequency weights have mean one over present classes") {
    // frequencies 3/4 and 1/4: raw inverses 4/3 and 4, mean-normalized
    std::vector<int> labels{0, 0, 0, 1};
    const std::vector<double> w = inverse_frequency_weights(labels, 2);
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK((w[0] + w[1]) / 2.0 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("confusion matrix rates and conservation") {
    // truth 0: one right, one wrong; truth 1: one right
    ConfusionMatrix cm = confusion_matrix({0, 1, 1}, {0, 0, 1}, 2);
    CHECK(cm.count(0, 0) == 1);
    CHECK(cm.count(0, 1) == 1);
    CHECK(cm.count(1, 1) == 1);
    CHECK(cm.rate(0, 0) == doctest::Approx(0.5));
    CHECK(cm.rate(0, 1) == doctest::Approx(0.5));
    CHECK(cm.rate(1, 0) == doctest::Approx(0.0));
    CHECK(cm.rate(1, 1) == doctest::Approx(1.0));
    std::int64_t total = 0;
    for (std::int64_t c : cm.counts) total += c;
    CHECK(total == 3);

    CHECK_THROWS_AS(confusion_matrix({0, 2}, {0, 0}, 2), ShapeError);
}

TEST_CASE("ssim identity, symmetry, degradation") {
    std::mt19937_64 rng(20);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    Tensor<float> a(Shape{1, 2, 24, 24});
    for (std::int64_t i = 0; i < a.size(); ++i) a.data[i] = u(rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    Tensor<float> b(a.shape);  // independent field: little shared structure
    for (std::int64_t i = 0; i < b.size(); ++i) b.data[i] = u(rng);
    const double ab = ssim(a, b);
    CHECK(ab < 0.5);
    CHECK(ab == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    Tensor<float> n = a;  // additive noise degrades but keeps correlation
    for (std::int64_t i = 0; i < n.size(); ++i)
        n.data[i] = std::min(1.f, std::max(0.f, n.data[i] + (u(rng) - 0.5f)));
    const double an = ssim(a, n);
    CHECK(an < 1.0);
    CHECK(an > ab);
}
