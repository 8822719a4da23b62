#pragma once

#include "scbn/geodata.hpp"

namespace scbn {

// Deterministic synthetic-geology dataset: Voronoi class regions, per-class
// aux signatures plus a smooth field and white noise, uniformly drawn samples.
struct SynthConfig {
    std::uint64_t seed = 0;
    int width = 96, height = 96;
    int n_classes = 4;
    int n_aux = 5;
    int n_samples = 600;
    double separation = 2.0;  // minimum distance between class mean vectors
    double noise_std = 0.5;
    double smooth_amp = 0.5;
    int sites_per_class = 2;

    void validate() const {
        require(n_classes >= 2, "synth: n_classes must be >= 2");
        require(std::int64_t(n_samples) <= std::int64_t(width) * height,
                "synth: more samples than pixels");
        require(n_aux >= 1 && width > 0 && height > 0, "synth: bad dimensions");
        require(separation >= 0.0 && noise_std >= 0.0, "synth: bad signal config");
    }
};

struct SynthDataset {
    RasterStack stack;          // normalized aux channels
    SampleTable samples;        // field samples labeled by true class
    std::vector<int> truth;     // row-major true class per pixel
    std::vector<std::string> vocab;
};

SynthDataset gen_dataset(const SynthConfig& cfg);

}  // namespace scbn
