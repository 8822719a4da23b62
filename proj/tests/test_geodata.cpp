#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scbn/geodata.hpp"
#include "scbn/synth.hpp"

#include <random>
#include <set>

using namespace scbn;

namespace {

RasterStack grid(int w, int h, int c = 1) {
    RasterStack s;
    s.width = w;
    s.height = h;
    s.channels = c;
    for (int i = 0; i < c; ++i) s.names.push_back("ch" + std::to_string(i));
    s.data = Tensor<float>(Shape{1, c, h, w});
    return s;
}

SampleTable table(std::initializer_list<SampleTable::Row> rows) {
    SampleTable t;
    t.rows = rows;
    return t;
}

}  // namespace

TEST_CASE("z-score normalization") {
    RasterStack s = grid(2, 1);
    s.at(0, 0, 0) = 0.f;
    s.at(0, 0, 1) = 10.f;
    zscore_normalize(s);
    CHECK(s.at(0, 0, 0) == doctest::Approx(-1.f));
    CHECK(s.at(0, 0, 1) == doctest::Approx(1.f));

    RasterStack c = grid(4, 1);
    c.data.data.setConstant(7.f);
    zscore_normalize(c);
    for (int x = 0; x < 4; ++x) CHECK(c.at(0, 0, x) == doctest::Approx(0.f));

    RasterStack nd = grid(3, 1);
    nd.at(0, 0, 0) = 0.f;
    nd.at(0, 0, 1) = 10.f;
    nd.at(0, 0, 2) = nd.nodata;
    zscore_normalize(nd);
    CHECK(nd.at(0, 0, 0) == doctest::Approx(-1.f));  // nodata excluded from stats
    CHECK(nd.at(0, 0, 2) == 0.f);                    // nodata mapped to 0
}

TEST_CASE("stack_channels merges and reports mismatches by name") {
    RasterStack a = grid(4, 4), b = grid(4, 4, 2);
    RasterStack out = stack_channels({{"mag", a}, {"grav", b}});
    CHECK(out.channels == 3);
    CHECK(out.names == std::vector<std::string>{"mag", "grav_0", "grav_1"});

    RasterStack bad = grid(5, 4);
    CHECK_THROWS_WITH_AS(stack_channels({{"mag", a}, {"odd", bad}}),
                         doctest::Contains("odd"), ShapeError);
}

TEST_CASE("rare class filtering") {
    SampleTable t;
    for (int i = 0; i < 98; ++i) t.rows.push_back({i % 10, i / 10, "A"});
    t.rows.push_back({0, 9, "B"});
    t.rows.push_back({1, 9, "B"});  // B at 2/100 survives the 1% cut
    auto [kept, vocab] = filter_rare_classes(t, 0.01);
    CHECK(vocab == std::vector<std::string>{"A", "B"});
    CHECK(kept.rows.size() == 100);

    SampleTable t2;
    for (int i = 0; i < 100; ++i) t2.rows.push_back({i % 10, i / 10, "A"});
    t2.rows.push_back({0, 9, "B"});  // B at 1/101 falls below the 1% cut
    auto [kept2, vocab2] = filter_rare_classes(t2, 0.01);
    CHECK(vocab2 == std::vector<std::string>{"A"});
    CHECK(kept2.rows.size() == 100);

    CHECK_THROWS_AS(filter_rare_classes(SampleTable{}, 0.01), ShapeError);
}

TEST_CASE("rasterization turns sample counts into per-pixel frequencies") {
    const std::vector<std::string> vocab{"A", "B"};
    SparseProbMasks one = rasterize_samples(table({{2, 3, "A"}}), 8, 8, vocab);
    CHECK(one.valid.data[3 * 8 + 2] == 1.f);
    CHECK(one.probs.at(0, 0, 3, 2) == doctest::Approx(1.f));
    CHECK(one.probs.at(0, 1, 3, 2) == doctest::Approx(0.f));

    SparseProbMasks multi =
        rasterize_samples(table({{1, 1, "A"}, {1, 1, "A"}, {1, 1, "B"}}), 4, 4, vocab);
    CHECK(multi.probs.at(0, 0, 1, 1) == doctest::Approx(2.f / 3.f));
    CHECK(multi.probs.at(0, 1, 1, 1) == doctest::Approx(1.f / 3.f));

    SparseProbMasks none = rasterize_samples(SampleTable{}, 4, 4, vocab);
    CHECK((none.valid.data == 0.f).all());

    CHECK_THROWS_WITH_AS(rasterize_samples(table({{9, 0, "A"}}), 8, 8, vocab),
                         doctest::Contains("outside grid"), ShapeError);
    CHECK_THROWS_WITH_AS(rasterize_samples(table({{0, 0, "Z"}}), 8, 8, vocab),
                         doctest::Contains("unknown class code"), ShapeError);
}

TEST_CASE("spatial split assigns sampled blocks and excludes validation") {
    // 30x30 grid, 15-pixel blocks: 4 blocks, one sample in each
    SparseProbMasks m = rasterize_samples(
        table({{3, 3, "A"}, {20, 3, "A"}, {3, 20, "A"}, {20, 20, "A"}}), 30, 30, {"A"});
    SpatialSplit sp = make_spatial_split(30, 30, m, 15, 0.75, std::nullopt, 5);
    CHECK(sp.blocks_x == 2);
    CHECK(sp.blocks_y == 2);
    int n_train = 0, n_test = 0;
    for (Role r : sp.roles) {
        if (r == Role::train) ++n_train;
        if (r == Role::test) ++n_test;
    }
    CHECK(n_train == 3);
    CHECK(n_test == 1);

    // a validation window claims its block regardless of samples
    Rect v{0, 0, 10, 10};
    SpatialSplit spv = make_spatial_split(30, 30, m, 15, 0.75, v, 5);
    CHECK(spv.role_at(3, 3) == Role::validation);
    for (int i = 0; i < 4; ++i) CHECK(spv.roles[std::size_t(i)] != Role::empty);

    CHECK_THROWS_WITH_AS(make_spatial_split(30, 30, m, 15, 0.75, Rect{0, 0, 0, 10}, 5),
                         doctest::Contains("degenerate"), ShapeError);
}

TEST_CASE("split roles stay disjoint and unsampled blocks stay empty across seeds") {
    SynthConfig sc;
    sc.seed = 9;
    sc.n_samples = 120;
    SynthDataset ds = gen_dataset(sc);
    SparseProbMasks m = rasterize_samples(ds.samples, sc.width, sc.height, ds.vocab);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SpatialSplit sp = make_spatial_split(sc.width, sc.height, m, 15, 0.8, std::nullopt, seed);
        for (std::size_t b = 0; b < sp.roles.size(); ++b) {
            const int bx = int(b) % sp.blocks_x, by = int(b) / sp.blocks_x;
            bool any = false;
            for (int y = by * 15; y < std::min(sc.height, (by + 1) * 15); ++y)
                for (int x = bx * 15; x < std::min(sc.width, (bx + 1) * 15); ++x)
                    if (m.valid.data[std::int64_t(y) * sc.width + x] > 0.5f) any = true;
            if (!any)
                CHECK(sp.roles[b] == Role::empty);
            else
                CHECK((sp.roles[b] == Role::train || sp.roles[b] == Role::test));
        }
        SparseProbMasks tr = restrict_to_role(m, sp, Role::train);
        SparseProbMasks te = restrict_to_role(m, sp, Role::test);
        for (std::int64_t q = 0; q < tr.valid.size(); ++q) {
            CHECK(!(tr.valid.data[q] > 0.5f && te.valid.data[q] > 0.5f));
            CHECK(float(tr.valid.data[q] > 0.5f) + float(te.valid.data[q] > 0.5f) ==
                  float(m.valid.data[q] > 0.5f));
        }
    }
}

TEST_CASE("stride lattice density honors the overlap cap") {
    RasterStack s = grid(320, 320);
    std::mt19937_64 rng(3);
    s.data = Tensor<float>::randn(Shape{1, 1, 320, 320}, rng);
    SparseProbMasks m = rasterize_samples(table({{5, 5, "A"}, {200, 200, "A"}}), 320, 320, {"A"});
    SpatialSplit sp = make_spatial_split(320, 320, m, 15, 1.0, std::nullopt, 1);

    PatchConfig pc;
    pc.patch = 160;
    pc.max_overlap = 0.5;  // stride 80: origins {0,80,160} per axis
    pc.n_patches = 100;
    pc.downscale_frac = 0.0;
    pc.rotate_frac = 0.0;
    PatchSet ps = extract_patches(s, m, sp, Role::train, pc, 7);
    CHECK(ps.patches.size() == 9);
    std::set<std::pair<int, int>> origins;
    for (const Patch& p : ps.patches) {
        CHECK(p.prov.ox % 80 == 0);
        CHECK(p.prov.oy % 80 == 0);
        CHECK(p.prov.scale == 1);
        origins.insert({p.prov.ox, p.prov.oy});
    }
    CHECK(origins.size() == 9);  // all lattice sites, no duplicates
}

TEST_CASE("patch extraction round-trips through provenance") {
    SynthConfig sc;
    sc.seed = 4;
    sc.width = 128;
    sc.height = 128;
    sc.n_samples = 400;
    SynthDataset ds = gen_dataset(sc);
    SparseProbMasks m = rasterize_samples(ds.samples, sc.width, sc.height, ds.vocab);
    SpatialSplit sp = make_spatial_split(sc.width, sc.height, m, 15, 0.8, std::nullopt, 2);

    PatchConfig pc;
    pc.patch = 48;
    pc.n_patches = 40;
    pc.downscale_frac = 0.3;
    pc.rotate_frac = 0.25;
    PatchSet ps = extract_patches(ds.stack, m, sp, Role::train, pc, 11);
    REQUIRE(!ps.patches.empty());
    bool saw_ds = false, saw_rot = false;
    for (const Patch& p : ps.patches) {
        saw_ds = saw_ds || p.prov.scale == 2;
        saw_rot = saw_rot || p.prov.rotation_deg != 0.0;
        Patch again = extract_one_patch(ds.stack, m, sp, Role::train, pc.patch, p.prov);
        CHECK((p.aux.data == again.aux.data).all());
        CHECK((p.target.probs.data == again.target.probs.data).all());
        CHECK((p.target.valid.data == again.target.valid.data).all());
        CHECK((p.cond.valid.data == again.cond.valid.data).all());
    }
    CHECK(saw_ds);
    CHECK(saw_rot);
}

TEST_CASE("patch targets follow the requested role, conditioning follows train") {
    SynthConfig sc;
    sc.seed = 13;
    sc.n_samples = 300;
    SynthDataset ds = gen_dataset(sc);
    SparseProbMasks m = rasterize_samples(ds.samples, sc.width, sc.height, ds.vocab);
    SpatialSplit sp = make_spatial_split(sc.width, sc.height, m, 15, 0.7, std::nullopt, 3);

    PatchConfig pc;
    pc.patch = 48;
    pc.n_patches = 10;
    pc.downscale_frac = 0.0;
    pc.rotate_frac = 0.0;
    PatchSet ps = extract_patches(ds.stack, m, sp, Role::test, pc, 17);
    for (const Patch& p : ps.patches)
        for (int y = 0; y < pc.patch; ++y)
            for (int x = 0; x < pc.patch; ++x) {
                const std::int64_t q = std::int64_t(y) * pc.patch + x;
                const Role r = sp.role_at(p.prov.ox + x, p.prov.oy + y);
                const bool sampled =
                    m.valid.data[std::int64_t(p.prov.oy + y) * sc.width + p.prov.ox + x] > 0.5f;
                CHECK(float(p.target.valid.data[q] > 0.5f) ==
                      float(sampled && r == Role::test));
                CHECK(float(p.cond.valid.data[q] > 0.5f) ==
                      float(sampled && r == Role::train));
            }
}

TEST_CASE("patch mask distributions channel-sum to one on valid pixels") {
    SynthConfig sc;
    sc.seed = 21;
    sc.n_samples = 500;
    SynthDataset ds = gen_dataset(sc);
    SparseProbMasks m = rasterize_samples(ds.samples, sc.width, sc.height, ds.vocab);
    SpatialSplit sp = make_spatial_split(sc.width, sc.height, m, 15, 0.8, std::nullopt, 4);

    PatchConfig pc;
    pc.patch = 48;
    pc.n_patches = 30;
    PatchSet ps = extract_patches(ds.stack, m, sp, Role::train, pc, 23);
    const std::int64_t plane = std::int64_t(pc.patch) * pc.patch;
    const int C = int(ds.vocab.size());
    for (const Patch& p : ps.patches)
        for (std::int64_t q = 0; q < plane; ++q) {
            float sum = 0;
            for (int c = 0; c < C; ++c) sum += p.target.probs.data[c * plane + q];
            if (p.target.valid.data[q] > 0.5f)
                CHECK(sum == doctest::Approx(1.f).epsilon(1e-5));
            else
                CHECK(sum == 0.f);
        }
}

TEST_CASE("zero-degree rotation reproduces the axis-aligned cut bit for bit") {
    SynthConfig sc;
    sc.seed = 31;
    sc.n_samples = 200;
    SynthDataset ds = gen_dataset(sc);
    SparseProbMasks m = rasterize_samples(ds.samples, sc.width, sc.height, ds.vocab);
    SpatialSplit sp = make_spatial_split(sc.width, sc.height, m, 15, 0.8, std::nullopt, 5);
    Provenance a{8, 8, 1, 0.0};
    Patch pa = extract_one_patch(ds.stack, m, sp, Role::train, 32, a);
    CHECK((pa.aux.data == pa.aux.data).all());
    // interior pixels of a tiny rotation stay close to the unrotated cut
    Provenance b{8, 8, 1, 1e-9};
    Patch pb = extract_one_patch(ds.stack, m, sp, Role::train, 32, b);
    for (int y = 4; y < 28; ++y)
        for (int x = 4; x < 28; ++x)
            CHECK(pb.aux.at(0, 0, y, x) ==
                  doctest::Approx(pa.aux.at(0, 0, y, x)).epsilon(1e-4));
}

TEST_CASE("conditioning holdout hides the expected fraction") {
    SparseProbMasks cond;
    cond.probs = Tensor<float>(Shape{1, 2, 64, 64});
    cond.valid = Tensor<float>(Shape{1, 1, 64, 64});
    cond.valid.data.setConstant(1.f);
    cond.probs.data.segment(0, 64 * 64).setConstant(1.f);

    std::mt19937_64 rng(7);
    std::int64_t kept_total = 0;
    const int reps = 50;
    for (int r = 0; r < reps; ++r) {
        auto [kept, sup] = conditioning_holdout(cond, 0.5, rng);
        CHECK((sup.valid.data == cond.valid.data).all());
        for (std::int64_t q = 0; q < kept.valid.size(); ++q) {
            // conditioning is a subset of supervision
            CHECK(!(kept.valid.data[q] > 0.5f && sup.valid.data[q] <= 0.5f));
            if (kept.valid.data[q] > 0.5f) ++kept_total;
        }
    }
    const double frac = double(kept_total) / double(reps * 64 * 64);
    CHECK(frac == doctest::Approx(0.5).epsilon(0.02));

    // rate 0 keeps everything
    auto [all, sup0] = conditioning_holdout(cond, 0.0, rng);
    CHECK((all.valid.data == cond.valid.data).all());
    CHECK((all.probs.data == cond.probs.data).all());
}

TEST_CASE("holdout never conditions on a lone supervision pixel") {
    SparseProbMasks cond;
    cond.probs = Tensor<float>(Shape{1, 2, 8, 8});
    cond.valid = Tensor<float>(Shape{1, 1, 8, 8});
    cond.valid.data[3 * 8 + 3] = 1.f;
    cond.probs.data[3 * 8 + 3] = 1.f;
    std::mt19937_64 rng(1);
    for (int r = 0; r < 20; ++r) {
        auto [kept, sup] = conditioning_holdout(cond, 0.1, rng);
        CHECK((kept.valid.data == 0.f).all());
        CHECK((sup.valid.data == cond.valid.data).all());
    }
}

TEST_CASE("argmax_labels picks the dominant class and flags unsampled pixels") {
    SparseProbMasks m = rasterize_samples(
        table({{0, 0, "A"}, {1, 0, "B"}, {1, 0, "B"}, {1, 0, "A"}}), 2, 2, {"A", "B"});
    std::vector<int> l = argmax_labels(m);
    CHECK(l[0] == 0);
    CHECK(l[1] == 1);
    CHECK(l[2] == -1);
    CHECK(l[3] == -1);
}
