#include "scbn/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace scbn {

void zscore_normalize(RasterStack& stack) {
    const std::int64_t plane = std::int64_t(stack.height) * stack.width;
    for (int c = 0; c < stack.channels; ++c) {
        double sum = 0, sq = 0;
        std::int64_t n = 0;
        for (std::int64_t i = 0; i < plane; ++i) {
            const float v = stack.data.data[c * plane + i];
            if (v == stack.nodata || !std::isfinite(v)) continue;
            sum += v;
            sq += double(v) * v;
            ++n;
        }
        const double mean = n ? sum / double(n) : 0.0;
        const double var = n ? std::max(0.0, sq / double(n) - mean * mean) : 0.0;
        const double inv = 1.0 / std::max(std::sqrt(var), 1e-6);
        for (std::int64_t i = 0; i < plane; ++i) {
            float& v = stack.data.data[c * plane + i];
            v = (v == stack.nodata || !std::isfinite(v)) ? 0.f
                                                         : float((v - mean) * inv);
        }
    }
}

RasterStack stack_channels(const std::vector<std::pair<std::string, RasterStack>>& channels) {
    require(!channels.empty(), "stack_channels: no channels");
    const RasterStack& first = channels.front().second;
    std::string mismatched;
    for (const auto& [name, ch] : channels)
        if (ch.width != first.width || ch.height != first.height)
            mismatched += (mismatched.empty() ? "" : ", ") + name;
    require(mismatched.empty(), "stack_channels: dimension mismatch in: " + mismatched);

    RasterStack out;
    out.width = first.width;
    out.height = first.height;
    out.channels = 0;
    out.nodata = first.nodata;
    out.pixel_size_m = first.pixel_size_m;
    for (const auto& [name, ch] : channels) out.channels += ch.channels;
    out.data = Tensor<float>(Shape{1, out.channels, out.height, out.width});
    const std::int64_t plane = std::int64_t(out.height) * out.width;
    int c = 0;
    for (const auto& [name, ch] : channels)
        for (int cc = 0; cc < ch.channels; ++cc, ++c) {
            out.names.push_back(ch.channels == 1 ? name
                                                 : name + "_" + std::to_string(cc));
            out.data.data.segment(std::int64_t(c) * plane, plane) =
                ch.data.data.segment(std::int64_t(cc) * plane, plane);
        }
    return out;
}

std::pair<SampleTable, std::vector<std::string>> filter_rare_classes(
    const SampleTable& samples, double threshold) {
    require(!samples.rows.empty(), "filter_rare_classes: empty sample table");
    std::map<std::string, std::int64_t> counts;
    for (const auto& r : samples.rows) ++counts[r.code];
    const double total = double(samples.rows.size());
    std::set<std::string> keep;
    for (const auto& [code, n] : counts)
        if (double(n) / total > threshold) keep.insert(code);
    require(!keep.empty(), "filter_rare_classes: all classes below frequency threshold");

    SampleTable out;
    for (const auto& r : samples.rows)
        if (keep.count(r.code)) out.rows.push_back(r);
    return {out, std::vector<std::string>(keep.begin(), keep.end())};
}

SparseProbMasks rasterize_samples(const SampleTable& samples, int width, int height,
                                  const std::vector<std::string>& vocabulary) {
    std::map<std::string, int> index;
    for (int i = 0; i < int(vocabulary.size()); ++i) index[vocabulary[i]] = i;
    const int c = int(vocabulary.size());
    SparseProbMasks m;
    m.probs = Tensor<float>(Shape{1, c, height, width});
    m.valid = Tensor<float>(Shape{1, 1, height, width});
    Tensor<float> counts(Shape{1, c, height, width});
    Tensor<float> totals(Shape{1, 1, height, width});
    for (const auto& r : samples.rows) {
        require(r.x >= 0 && r.x < width && r.y >= 0 && r.y < height,
                "rasterize_samples: sample outside grid at (" + std::to_string(r.x) + "," +
                    std::to_string(r.y) + ")");
        auto it = index.find(r.code);
        require(it != index.end(), "rasterize_samples: unknown class code " + r.code);
        counts.data[counts.index(0, it->second, r.y, r.x)] += 1.f;
        totals.data[totals.index(0, 0, r.y, r.x)] += 1.f;
    }
    const std::int64_t plane = std::int64_t(height) * width;
    for (std::int64_t q = 0; q < plane; ++q) {
        const float t = totals.data[q];
        if (t <= 0.f) continue;
        m.valid.data[q] = 1.f;
        for (int ci = 0; ci < c; ++ci)
            m.probs.data[ci * plane + q] = counts.data[ci * plane + q] / t;
    }
    return m;
}

SpatialSplit make_spatial_split(int width, int height, const SparseProbMasks& masks,
                                int block, double train_frac,
                                const std::optional<Rect>& validation_rect,
                                std::uint64_t seed) {
    require(block >= 1, "make_spatial_split: block must be >= 1");
    if (validation_rect)
        require(validation_rect->w > 0 && validation_rect->h > 0 &&
                    validation_rect->x >= 0 && validation_rect->y >= 0 &&
                    validation_rect->x + validation_rect->w <= width &&
                    validation_rect->y + validation_rect->h <= height,
                "make_spatial_split: degenerate validation rect");

    SpatialSplit sp;
    sp.width = width;
    sp.height = height;
    sp.block = block;
    sp.blocks_x = (width + block - 1) / block;
    sp.blocks_y = (height + block - 1) / block;
    sp.roles.assign(std::size_t(sp.blocks_x) * sp.blocks_y, Role::empty);

    std::vector<std::size_t> assignable;
    for (int by = 0; by < sp.blocks_y; ++by)
        for (int bx = 0; bx < sp.blocks_x; ++bx) {
            const std::size_t bi = std::size_t(by) * sp.blocks_x + bx;
            const int x0 = bx * block, y0 = by * block;
            const int x1 = std::min(width, x0 + block), y1 = std::min(height, y0 + block);
            if (validation_rect) {
                const Rect& r = *validation_rect;
                const bool overlap = x0 < r.x + r.w && r.x < x1 && y0 < r.y + r.h && r.y < y1;
                if (overlap) {
                    sp.roles[bi] = Role::validation;
                    continue;
                }
            }
            bool any = false;
            for (int y = y0; y < y1 && !any; ++y)
                for (int x = x0; x < x1 && !any; ++x)
                    if (masks.valid.data[std::int64_t(y) * width + x] > 0.5f) any = true;
            if (any) assignable.push_back(bi);
        }

    std::mt19937_64 rng(seed);
    std::shuffle(assignable.begin(), assignable.end(), rng);
    const std::size_t n_train =
        std::size_t(std::llround(train_frac * double(assignable.size())));
    for (std::size_t i = 0; i < assignable.size(); ++i)
        sp.roles[assignable[i]] = i < n_train ? Role::train : Role::test;
    return sp;
}

SparseProbMasks restrict_to_role(const SparseProbMasks& masks, const SpatialSplit& split,
                                 Role role) {
    SparseProbMasks out;
    out.probs = Tensor<float>(masks.probs.shape);
    out.valid = Tensor<float>(masks.valid.shape);
    const int w = masks.width(), h = masks.height(), c = masks.n_classes();
    const std::int64_t plane = std::int64_t(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::int64_t q = std::int64_t(y) * w + x;
            if (masks.valid.data[q] <= 0.5f || split.role_at(x, y) != role) continue;
            out.valid.data[q] = 1.f;
            for (int ci = 0; ci < c; ++ci)
                out.probs.data[ci * plane + q] = masks.probs.data[ci * plane + q];
        }
    return out;
}

namespace {

RasterStack downsample2x(const RasterStack& s) {
    RasterStack out;
    out.width = s.width / 2;
    out.height = s.height / 2;
    out.channels = s.channels;
    out.names = s.names;
    out.nodata = s.nodata;
    out.pixel_size_m = s.pixel_size_m * 2;
    out.data = Tensor<float>(Shape{1, s.channels, out.height, out.width});
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                out.at(c, y, x) = 0.25f * (s.at(c, 2 * y, 2 * x) + s.at(c, 2 * y, 2 * x + 1) +
                                           s.at(c, 2 * y + 1, 2 * x) +
                                           s.at(c, 2 * y + 1, 2 * x + 1));
    return out;
}

// Mean of the child probability vectors over valid children, renormalized.
SparseProbMasks downsample2x(const SparseProbMasks& m) {
    const int c = m.n_classes();
    SparseProbMasks out;
    out.probs = Tensor<float>(Shape{1, c, m.height() / 2, m.width() / 2});
    out.valid = Tensor<float>(Shape{1, 1, m.height() / 2, m.width() / 2});
    const std::int64_t plane = std::int64_t(m.height()) * m.width();
    const std::int64_t oplane = std::int64_t(out.probs.shape.h) * out.probs.shape.w;
    for (int y = 0; y < out.probs.shape.h; ++y)
        for (int x = 0; x < out.probs.shape.w; ++x) {
            float total = 0.f;
            std::vector<float> acc(std::size_t(c), 0.f);
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const std::int64_t q = std::int64_t(2 * y + dy) * m.width() + 2 * x + dx;
                    if (m.valid.data[q] <= 0.5f) continue;
                    total += 1.f;
                    for (int ci = 0; ci < c; ++ci) acc[ci] += m.probs.data[ci * plane + q];
                }
            if (total <= 0.f) continue;
            const std::int64_t oq = std::int64_t(y) * out.probs.shape.w + x;
            out.valid.data[oq] = 1.f;
            for (int ci = 0; ci < c; ++ci)
                out.probs.data[ci * oplane + oq] = acc[ci] / total;
        }
    return out;
}

struct SourceGrids {
    const RasterStack* stack;
    const SparseProbMasks* target;
    const SparseProbMasks* cond;
};

float bilinear(const RasterStack& s, int c, double y, double x) {
    const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) return 0.0;
        return s.at(c, yy, xx);
    };
    return float((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                 fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)));
}

Patch cut_patch(const SourceGrids& src, int patch, const Provenance& prov) {
    const RasterStack& s = *src.stack;
    const int c_aux = s.channels, c_cls = src.target->n_classes();
    Patch p;
    p.prov = prov;
    p.aux = Tensor<float>(Shape{1, c_aux, patch, patch});
    p.target.probs = Tensor<float>(Shape{1, c_cls, patch, patch});
    p.target.valid = Tensor<float>(Shape{1, 1, patch, patch});
    p.cond.probs = Tensor<float>(Shape{1, c_cls, patch, patch});
    p.cond.valid = Tensor<float>(Shape{1, 1, patch, patch});

    const std::int64_t splane = std::int64_t(s.height) * s.width;
    const std::int64_t pplane = std::int64_t(patch) * patch;

    if (prov.rotation_deg == 0.0) {
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x) {
                const int sy = prov.oy + y, sx = prov.ox + x;
                const std::int64_t q = std::int64_t(sy) * s.width + sx;
                const std::int64_t oq = std::int64_t(y) * patch + x;
                for (int c = 0; c < c_aux; ++c)
                    p.aux.data[c * pplane + oq] = s.at(c, sy, sx);
                if (src.target->valid.data[q] > 0.5f) {
                    p.target.valid.data[oq] = 1.f;
                    for (int c = 0; c < c_cls; ++c)
                        p.target.probs.data[c * pplane + oq] =
                            src.target->probs.data[c * splane + q];
                }
                if (src.cond->valid.data[q] > 0.5f) {
                    p.cond.valid.data[oq] = 1.f;
                    for (int c = 0; c < c_cls; ++c)
                        p.cond.probs.data[c * pplane + oq] =
                            src.cond->probs.data[c * splane + q];
                }
            }
        return p;
    }

    // Rotated tile: inverse-rotate output coordinates about the patch center.
    const double rad = prov.rotation_deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = prov.ox + (patch - 1) / 2.0, cy = prov.oy + (patch - 1) / 2.0;
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) {
            const double dx = prov.ox + x - cx, dy = prov.oy + y - cy;
            const double sxf = cx + cs * dx - sn * dy;
            const double syf = cy + sn * dx + cs * dy;
            const std::int64_t oq = std::int64_t(y) * patch + x;
            for (int c = 0; c < c_aux; ++c)
                p.aux.data[c * pplane + oq] = bilinear(s, c, syf, sxf);
            const int nx = int(std::lround(sxf)), ny = int(std::lround(syf));
            if (nx < 0 || nx >= s.width || ny < 0 || ny >= s.height) continue;
            const std::int64_t q = std::int64_t(ny) * s.width + nx;
            if (src.target->valid.data[q] > 0.5f) {
                p.target.valid.data[oq] = 1.f;
                for (int c = 0; c < c_cls; ++c)
                    p.target.probs.data[c * pplane + oq] =
                        src.target->probs.data[c * splane + q];
            }
            if (src.cond->valid.data[q] > 0.5f) {
                p.cond.valid.data[oq] = 1.f;
                for (int c = 0; c < c_cls; ++c)
                    p.cond.probs.data[c * pplane + oq] = src.cond->probs.data[c * splane + q];
            }
        }
    return p;
}

std::vector<std::pair<int, int>> stride_lattice(int width, int height, int patch,
                                                double max_overlap) {
    const int stride = std::max(1, int(std::ceil(double(patch) * (1.0 - max_overlap))));
    std::vector<std::pair<int, int>> origins;
    for (int y = 0; y + patch <= height; y += stride)
        for (int x = 0; x + patch <= width; x += stride) origins.emplace_back(x, y);
    return origins;
}

}  // namespace

PatchSet extract_patches(const RasterStack& stack, const SparseProbMasks& masks,
                         const SpatialSplit& split, Role role, const PatchConfig& cfg,
                         std::uint64_t seed) {
    require(stack.width >= cfg.patch && stack.height >= cfg.patch,
            "extract_patches: patch larger than grid");
    require(masks.width() == stack.width && masks.height() == stack.height,
            "extract_patches: mask/stack dimension mismatch");

    const SparseProbMasks target_full = restrict_to_role(masks, split, role);
    const SparseProbMasks cond_full = restrict_to_role(masks, split, Role::train);
    const RasterStack stack_ds = downsample2x(stack);
    const SparseProbMasks target_ds = downsample2x(target_full);
    const SparseProbMasks cond_ds = downsample2x(cond_full);

    auto lat_full = stride_lattice(stack.width, stack.height, cfg.patch, cfg.max_overlap);
    auto lat_ds = (stack_ds.width >= cfg.patch && stack_ds.height >= cfg.patch)
                      ? stride_lattice(stack_ds.width, stack_ds.height, cfg.patch,
                                       cfg.max_overlap)
                      : std::vector<std::pair<int, int>>{};

    std::mt19937_64 rng(seed);
    std::shuffle(lat_full.begin(), lat_full.end(), rng);
    std::shuffle(lat_ds.begin(), lat_ds.end(), rng);

    std::size_t n_ds = std::size_t(std::llround(cfg.downscale_frac * cfg.n_patches));
    n_ds = std::min(n_ds, lat_ds.size());
    std::size_t n_full = std::min(std::size_t(cfg.n_patches) - n_ds, lat_full.size());

    const SourceGrids src_full{&stack, &target_full, &cond_full};
    const SourceGrids src_ds{&stack_ds, &target_ds, &cond_ds};

    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> ang(-cfg.rotate_range_deg, cfg.rotate_range_deg);

    PatchSet out;
    out.patch_size = cfg.patch;
    auto emit = [&](const SourceGrids& src, int scale, std::pair<int, int> origin) {
        Provenance prov;
        prov.ox = origin.first;
        prov.oy = origin.second;
        prov.scale = scale;
        prov.rotation_deg = (cfg.rotate_frac > 0.0 && u(rng) < cfg.rotate_frac) ? ang(rng) : 0.0;
        out.patches.push_back(cut_patch(src, cfg.patch, prov));
    };
    for (std::size_t i = 0; i < n_full; ++i) emit(src_full, 1, lat_full[i]);
    for (std::size_t i = 0; i < n_ds; ++i) emit(src_ds, 2, lat_ds[i]);
    std::shuffle(out.patches.begin(), out.patches.end(), rng);
    return out;
}

Patch extract_one_patch(const RasterStack& stack, const SparseProbMasks& masks,
                        const SpatialSplit& split, Role role, int patch_size,
                        const Provenance& prov) {
    const SparseProbMasks target_full = restrict_to_role(masks, split, role);
    const SparseProbMasks cond_full = restrict_to_role(masks, split, Role::train);
    if (prov.scale == 1) {
        const SourceGrids src{&stack, &target_full, &cond_full};
        return cut_patch(src, patch_size, prov);
    }
    const RasterStack stack_ds = downsample2x(stack);
    const SparseProbMasks target_ds = downsample2x(target_full);
    const SparseProbMasks cond_ds = downsample2x(cond_full);
    const SourceGrids src{&stack_ds, &target_ds, &cond_ds};
    return cut_patch(src, patch_size, prov);
}

std::pair<SparseProbMasks, SparseProbMasks> conditioning_holdout(
    const SparseProbMasks& cond, double holdout_rate, std::mt19937_64& rng) {
    require(holdout_rate >= 0.0 && holdout_rate < 1.0,
            "conditioning_holdout: rate must be in [0,1)");
    SparseProbMasks kept = cond;
    const std::int64_t plane = std::int64_t(cond.height()) * cond.width();
    const int c = cond.n_classes();
    std::int64_t n_valid = 0;
    for (std::int64_t q = 0; q < plane; ++q)
        if (cond.valid.data[q] > 0.5f) ++n_valid;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t q = 0; q < plane; ++q) {
        if (cond.valid.data[q] <= 0.5f) continue;
        // a lone valid pixel goes to supervision only
        if ((holdout_rate > 0.0 && n_valid == 1) || u(rng) < holdout_rate) {
            kept.valid.data[q] = 0.f;
            for (int ci = 0; ci < c; ++ci) kept.probs.data[ci * plane + q] = 0.f;
        }
    }
    return {kept, cond};
}

std::vector<int> argmax_labels(const SparseProbMasks& masks) {
    const std::int64_t plane = std::int64_t(masks.height()) * masks.width();
    const int c = masks.n_classes();
    std::vector<int> out(std::size_t(plane), -1);
    for (std::int64_t q = 0; q < plane; ++q) {
        if (masks.valid.data[q] <= 0.5f) continue;
        int best = 0;
        float bv = masks.probs.data[q];
        for (int ci = 1; ci < c; ++ci) {
            const float v = masks.probs.data[ci * plane + q];
            if (v > bv) {
                bv = v;
                best = ci;
            }
        }
        out[std::size_t(q)] = best;
    }
    return out;
}

}  // namespace scbn
