#pragma once

#include "scbn/tensor.hpp"

#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace scbn {

// Multi-channel grid of auxiliary variables, stored as a (1,C,H,W) tensor.
struct RasterStack {
    int width = 0, height = 0, channels = 0;
    std::vector<std::string> names;
    float nodata = -9999.f;
    float pixel_size_m = 400.f;  // metadata only
    Tensor<float> data;

    float at(int c, int y, int x) const { return data.at(0, c, y, x); }
    float& at(int c, int y, int x) { return data.data[data.index(0, c, y, x)]; }
};

// Per-channel z-score over non-nodata pixels (std floor 1e-6), then nodata
// replaced by 0.
void zscore_normalize(RasterStack& stack);

// Stacks single-channel grids into one RasterStack; all must share dimensions.
RasterStack stack_channels(const std::vector<std::pair<std::string, RasterStack>>& channels);

struct SampleTable {
    struct Row {
        int x = 0, y = 0;
        std::string code;
    };
    std::vector<Row> rows;
};

// Drops classes whose sample frequency is <= threshold; returns the surviving
// table and the vocabulary ordered by class code.
std::pair<SampleTable, std::vector<std::string>> filter_rare_classes(
    const SampleTable& samples, double threshold = 0.01);

// Per-pixel class-frequency distributions plus a validity mask.
struct SparseProbMasks {
    Tensor<float> probs;  // (1,C,H,W), channel-sums to 1 on valid pixels
    Tensor<float> valid;  // (1,1,H,W) binary

    int n_classes() const { return probs.shape.c; }
    int height() const { return probs.shape.h; }
    int width() const { return probs.shape.w; }
};

SparseProbMasks rasterize_samples(const SampleTable& samples, int width, int height,
                                  const std::vector<std::string>& vocabulary);

enum class Role : std::uint8_t { empty = 0, train = 1, test = 2, validation = 3 };

struct Rect {
    int x = 0, y = 0, w = 0, h = 0;
};

// Block-wise train/test/validation assignment.
struct SpatialSplit {
    int width = 0, height = 0, block = 15;
    int blocks_x = 0, blocks_y = 0;
    std::vector<Role> roles;  // row-major over blocks

    Role role_at(int x, int y) const {
        return roles[std::size_t(y / block) * blocks_x + x / block];
    }
};

SpatialSplit make_spatial_split(int width, int height, const SparseProbMasks& masks,
                                int block, double train_frac,
                                const std::optional<Rect>& validation_rect,
                                std::uint64_t seed);

// Restricts a mask grid to pixels whose split role matches.
SparseProbMasks restrict_to_role(const SparseProbMasks& masks, const SpatialSplit& split,
                                 Role role);

struct Provenance {
    int ox = 0, oy = 0;       // origin in source-grid pixels (at `scale`)
    int scale = 1;            // 1 = native, 2 = under-sampled source
    double rotation_deg = 0;  // 0 = axis-aligned copy
};

struct Patch {
    Tensor<float> aux;       // (1,n_aux,P,P)
    SparseProbMasks target;  // supervision pixels of the requested role
    SparseProbMasks cond;    // train-role pixels fed to the model input
    Provenance prov;
};

struct PatchSet {
    int patch_size = 0;
    std::vector<Patch> patches;
};

struct PatchConfig {
    int patch = 160;
    double max_overlap = 0.8;
    int n_patches = 2600;
    double downscale_frac = 0.3;
    double rotate_frac = 0.25;
    double rotate_range_deg = 12.0;
};

// Samples patch origins on a stride lattice (stride >= patch*(1-max_overlap)),
// mixing in 2x under-sampled tiles and rotated tiles per the config fractions.
// Target masks carry only pixels whose role matches `role`; conditioning masks
// always carry train-role pixels.
PatchSet extract_patches(const RasterStack& stack, const SparseProbMasks& masks,
                         const SpatialSplit& split, Role role, const PatchConfig& cfg,
                         std::uint64_t seed);

// Re-extracts a single patch from its provenance (used for round-trip checks).
Patch extract_one_patch(const RasterStack& stack, const SparseProbMasks& masks,
                        const SpatialSplit& split, Role role, int patch_size,
                        const Provenance& prov);

// Randomly hides a `holdout_rate` fraction of the conditioning pixels; the
// supervision masks keep every valid pixel.
std::pair<SparseProbMasks, SparseProbMasks> conditioning_holdout(
    const SparseProbMasks& cond, double holdout_rate, std::mt19937_64& rng);

// argmax class at a valid pixel, -1 elsewhere.
std::vector<int> argmax_labels(const SparseProbMasks& masks);

}  // namespace scbn
