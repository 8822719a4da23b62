#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scbn/infer.hpp"
#include "scbn/io.hpp"
#include "scbn/synth.hpp"
#include "scbn/train.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace scbn;

namespace {

struct Bench {
    SynthDataset ds;
    SparseProbMasks masks;
    SpatialSplit split;
    PatchSet train_patches;
    PatchSet test_patches;
    ArchConfig arch;
};

// Small shared workbench: 64x64 grid, 3 classes, trainable in seconds.
Bench make_bench(std::uint64_t seed = 0) {
    Bench b;
    SynthConfig sc;
    sc.seed = seed;
    sc.width = 64;
    sc.height = 64;
    sc.n_classes = 3;
    sc.n_aux = 3;
    sc.n_samples = 400;
    sc.separation = 4.0;
    sc.noise_std = 0.3;
    b.ds = gen_dataset(sc);
    b.masks = rasterize_samples(b.ds.samples, sc.width, sc.height, b.ds.vocab);
    b.split = make_spatial_split(sc.width, sc.height, b.masks, 15, 0.8, std::nullopt, seed);

    PatchConfig pc;
    pc.patch = 16;
    pc.max_overlap = 0.5;
    pc.n_patches = 24;
    pc.downscale_frac = 0.2;
    pc.rotate_frac = 0.0;
    b.train_patches = extract_patches(b.ds.stack, b.masks, b.split, Role::train, pc, seed + 1);
    b.test_patches = extract_patches(b.ds.stack, b.masks, b.split, Role::test, pc, seed + 2);

    b.arch.depth = 2;
    b.arch.base_filters = 4;
    b.arch.embed_channels = 4;
    b.arch.n_aux_channels = 3;
    b.arch.n_classes = 3;
    b.arch.patch_size = 16;
    b.arch.dropblock.drop_rate = 0.1;
    b.arch.dropblock.block_size = 3;
    return b;
}

TrainConfig quick_cfg(int epochs) {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = epochs;
    cfg.patience = epochs;
    cfg.holdout_rate = 0.3;
    cfg.seed = 3;
    cfg.verbose = false;
    return cfg;
}

bool same_bytes(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::ostringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    return sa.str() == sb.str();
}

}  // namespace

TEST_CASE("training reduces the loss over the first epochs") {
    Bench b = make_bench(1);
    std::mt19937_64 rng(7);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    TrainResult res = train(std::move(ckpt), b.train_patches, b.test_patches, quick_cfg(6));
    REQUIRE(res.history.rows.size() == 6);
    CHECK(res.history.rows.back().loss < res.history.rows.front().loss);
    for (const HistoryRow& r : res.history.rows) {
        CHECK(std::isfinite(r.loss));
        CHECK(r.test_acc >= 0.0);
        CHECK(r.test_acc <= 1.0);
    }
    // the returned checkpoint carries the best test accuracy seen
    double best = 0;
    for (const HistoryRow& r : res.history.rows) best = std::max(best, r.test_acc);
    CHECK(res.ckpt.best_test_acc == doctest::Approx(best));
}

TEST_CASE("training is deterministic per seed down to the checkpoint bytes") {
    Bench b = make_bench(2);
    std::mt19937_64 r1(9), r2(9);
    auto c1 = build_model<float>(b.arch, r1, b.ds.vocab);
    auto c2 = build_model<float>(b.arch, r2, b.ds.vocab);
    TrainResult a = train(std::move(c1), b.train_patches, b.test_patches, quick_cfg(4));
    TrainResult c = train(std::move(c2), b.train_patches, b.test_patches, quick_cfg(4));

    REQUIRE(a.history.rows.size() == c.history.rows.size());
    for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
        CHECK(a.history.rows[i].loss == c.history.rows[i].loss);
        CHECK(a.history.rows[i].train_acc == c.history.rows[i].train_acc);
        CHECK(a.history.rows[i].test_acc == c.history.rows[i].test_acc);
    }
    save_history_csv(a.history, "hist_a.csv");
    save_history_csv(c.history, "hist_b.csv");
    CHECK(same_bytes("hist_a.csv", "hist_b.csv"));
    save_checkpoint(a.ckpt, "ckpt_a.bin");
    save_checkpoint(c.ckpt, "ckpt_b.bin");
    CHECK(same_bytes("ckpt_a.bin", "ckpt_b.bin"));
    for (const char* f : {"hist_a.csv", "hist_b.csv", "ckpt_a.bin", "ckpt_b.bin"})
        std::remove(f);
}

TEST_CASE("early stopping halts before max_epochs without improvement") {
    Bench b = make_bench(3);
    std::mt19937_64 rng(5);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    TrainConfig cfg = quick_cfg(60);
    cfg.learning_rate = 1e-9;  // effectively frozen: accuracy cannot improve
    cfg.patience = 3;
    cfg.early_stop_delta = 1e-3;
    TrainResult res = train(std::move(ckpt), b.train_patches, b.test_patches, cfg);
    CHECK(res.history.rows.size() < 60);
    CHECK(res.history.rows.size() >= 3);
}

TEST_CASE("history CSV layout") {
    TrainHistory h;
    HistoryRow r;
    r.epoch = 1;
    r.loss = 0.5;
    r.train_acc = 0.25;
    r.test_acc = 0.125;
    r.train_ssim = 0.75;
    r.test_ssim = 0.5;
    r.wall_time_s = 123.0;  // must not leak into the file
    h.rows.push_back(r);
    save_history_csv(h, "hist_fmt.csv");
    std::ifstream f("hist_fmt.csv");
    std::string l1, l2;
    std::getline(f, l1);
    std::getline(f, l2);
    f.close();
    std::remove("hist_fmt.csv");
    CHECK(l1 == "epoch,loss,train_acc,test_acc,train_ssim,test_ssim");
    CHECK(l2 == "1,0.5,0.25,0.125,0.75,0.5");
}

TEST_CASE("finetune re-heads the model for a new vocabulary") {
    Bench b = make_bench(4);
    std::mt19937_64 rng(11);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    TrainResult pre = train(std::move(ckpt), b.train_patches, b.test_patches, quick_cfg(2));

    // same vocabulary: the trunk enters finetuning unchanged
    TrainResult same = finetune(pre.ckpt, b.train_patches, b.test_patches, b.ds.vocab,
                                quick_cfg(2));
    CHECK(same.ckpt.vocab == b.ds.vocab);
    CHECK(same.history.tag == "finetune");

    // different class count: rebuild a 4-class bench and transfer into it
    Bench b4 = make_bench(5);
    SynthConfig sc4;
    sc4.seed = 50;
    sc4.width = 64;
    sc4.height = 64;
    sc4.n_classes = 4;
    sc4.n_aux = 3;
    sc4.n_samples = 400;
    SynthDataset ds4 = gen_dataset(sc4);
    SparseProbMasks m4 = rasterize_samples(ds4.samples, 64, 64, ds4.vocab);
    SpatialSplit sp4 = make_spatial_split(64, 64, m4, 15, 0.8, std::nullopt, 50);
    PatchConfig pc;
    pc.patch = 16;
    pc.max_overlap = 0.5;
    pc.n_patches = 24;
    pc.rotate_frac = 0.0;
    PatchSet tr4 = extract_patches(ds4.stack, m4, sp4, Role::train, pc, 51);
    PatchSet te4 = extract_patches(ds4.stack, m4, sp4, Role::test, pc, 52);
    TrainResult moved = finetune(pre.ckpt, tr4, te4, ds4.vocab, quick_cfg(2));
    CHECK(moved.ckpt.arch.n_classes == 4);
    CHECK(moved.ckpt.vocab == ds4.vocab);
    CHECK(moved.history.rows.size() == 2);
}

TEST_CASE("mc_predict basics: shapes, simplex mean, degenerate std") {
    Bench b = make_bench(6);
    std::mt19937_64 rng(13);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);

    EnsembleResult one = mc_predict(ckpt, b.ds.stack, &b.masks, 1, 32, 8, 99);
    CHECK(one.mean.shape == Shape{1, 3, 64, 64});
    CHECK(one.n_draws == 1);
    CHECK(one.constrained);
    CHECK((one.stddev.data == 0.f).all());  // a single draw has zero spread

    EnsembleResult det = mc_predict(ckpt, b.ds.stack, nullptr, 5, 32, 8, 99, 1, true);
    CHECK(!det.constrained);
    CHECK(det.stddev.data.maxCoeff() <= 1e-7f);  // identical deterministic draws

    EnsembleResult mc = mc_predict(ckpt, b.ds.stack, nullptr, 5, 32, 8, 99);
    CHECK(mc.stddev.data.maxCoeff() > 0.f);
    const std::int64_t plane = 64 * 64;
    for (std::int64_t q = 0; q < plane; ++q) {
        float sum = 0;
        for (int c = 0; c < 3; ++c) sum += mc.mean.data[c * plane + q];
        CHECK(sum == doctest::Approx(1.f).epsilon(1e-4));
        CHECK(mc.argmax_map[std::size_t(q)] >= 0);
        CHECK(mc.argmax_map[std::size_t(q)] < 3);
    }
}

TEST_CASE("mc_predict threading matches the single-thread result") {
    Bench b = make_bench(7);
    std::mt19937_64 rng(17);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    EnsembleResult a = mc_predict(ckpt, b.ds.stack, nullptr, 4, 32, 8, 5, 1);
    EnsembleResult c = mc_predict(ckpt, b.ds.stack, nullptr, 4, 32, 8, 5, 3);
    CHECK((a.mean.data == c.mean.data).all());
    CHECK((a.stddev.data == c.stddev.data).all());
}

TEST_CASE("mc_predict input validation") {
    Bench b = make_bench(8);
    std::mt19937_64 rng(19);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    CHECK_THROWS_WITH_AS(mc_predict(ckpt, b.ds.stack, nullptr, 0, 32, 8, 1),
                         doctest::Contains("n_draws"), ShapeError);
    CHECK_THROWS_WITH_AS(mc_predict(ckpt, b.ds.stack, nullptr, 1, 30, 8, 1),
                         doctest::Contains("not divisible"), ShapeError);
    CHECK_THROWS_WITH_AS(mc_predict(ckpt, b.ds.stack, nullptr, 1, 128, 8, 1),
                         doctest::Contains("larger than grid"), ShapeError);
    CHECK_THROWS_WITH_AS(mc_predict(ckpt, b.ds.stack, nullptr, 1, 32, 32, 1),
                         doctest::Contains("overlap"), ShapeError);
}

TEST_CASE("evaluate scores sampled pixels of one role") {
    Bench b = make_bench(9);
    std::mt19937_64 rng(23);
    auto ckpt = build_model<float>(b.arch, rng, b.ds.vocab);
    EnsembleResult r = mc_predict(ckpt, b.ds.stack, &b.masks, 2, 32, 8, 7);
    EvalBundle ev = evaluate(r, b.masks, b.split, Role::test);
    CHECK(ev.n_pixels > 0);
    CHECK(ev.weighted_acc >= 0.0);
    CHECK(ev.weighted_acc <= 1.0);
    CHECK(int(ev.per_class_acc.size()) == 3);
    // misclass grid marks exactly the scored pixels
    std::int64_t marked = 0;
    for (std::uint8_t m : ev.misclass)
        if (m) ++marked;
    CHECK(marked == ev.n_pixels);
    std::int64_t cm_total = 0;
    for (std::int64_t c : ev.cm.counts) cm_total += c;
    CHECK(cm_total == ev.n_pixels);

    CHECK_THROWS_WITH_AS(evaluate(r, b.masks, b.split, Role::validation),
                         doctest::Contains("no sampled pixels"), NumericError);
}

TEST_CASE("GRD raster round trip") {
    SynthConfig sc;
    sc.seed = 33;
    sc.width = 20;
    sc.height = 12;
    sc.n_samples = 100;
    SynthDataset ds = gen_dataset(sc);
    ds.stack.pixel_size_m = 250.f;
    save_grd(ds.stack, "rt.grd");
    RasterStack back = load_grd("rt.grd");
    std::remove("rt.grd");
    CHECK(back.width == 20);
    CHECK(back.height == 12);
    CHECK(back.channels == ds.stack.channels);
    CHECK(back.names == ds.stack.names);
    CHECK(back.nodata == ds.stack.nodata);
    CHECK(back.pixel_size_m == 250.f);
    CHECK((back.data.data == ds.stack.data.data).all());

    std::ofstream bad("bad.grd", std::ios::binary);
    bad << "not a raster";
    bad.close();
    CHECK_THROWS_AS(load_grd("bad.grd"), ShapeError);
    std::remove("bad.grd");
}

TEST_CASE("samples CSV round trip") {
    SampleTable t;
    t.rows = {{1, 2, "GRANITE"}, {3, 4, "BASALT"}, {3, 4, "BASALT"}};
    save_samples_csv(t, "rt.csv");
    SampleTable back = load_samples_csv("rt.csv");
    std::remove("rt.csv");
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[0].x == 1);
    CHECK(back.rows[0].y == 2);
    CHECK(back.rows[0].code == "GRANITE");
    CHECK(back.rows[2].code == "BASALT");

    std::ofstream bad("bad.csv");
    bad << "lon,lat,unit\n1,2,A\n";
    bad.close();
    CHECK_THROWS_AS(load_samples_csv("bad.csv"), ShapeError);
    std::remove("bad.csv");
}

TEST_CASE("PNG writers emit valid signatures") {
    std::vector<std::array<std::uint8_t, 3>> rgb(16 * 8, {10, 200, 30});
    write_png_rgb("t.png", 16, 8, rgb);
    std::ifstream f("t.png", std::ios::binary);
    unsigned char sig[8];
    f.read(reinterpret_cast<char*>(sig), 8);
    f.close();
    std::remove("t.png");
    const unsigned char expect[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    for (int i = 0; i < 8; ++i) CHECK(sig[i] == expect[i]);

    std::vector<std::uint8_t> gray(16 * 8, 128);
    write_png_gray("g.png", 16, 8, gray);
    std::ifstream g("g.png", std::ios::binary);
    g.read(reinterpret_cast<char*>(sig), 8);
    g.close();
    std::remove("g.png");
    for (int i = 0; i < 8; ++i) CHECK(sig[i] == expect[i]);

    CHECK(class_color(0) != class_color(1));
}
