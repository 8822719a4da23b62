#pragma once

#include "scbn/tensor.hpp"

#include <vector>

namespace scbn {

// Class-frequency weights normalized to mean 1 (inverse frequency).
std::vector<double> inverse_frequency_weights(const std::vector<int>& labels, int n_classes);

// Accuracy with per-sample weights taken from the true class:
//   sum w_c(i) * [pred_i == true_i] / sum w_c(i).
double weighted_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                         const std::vector<double>& class_weights);

struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<std::int64_t> counts;  // row-major, counts[true * C + pred]
    std::vector<double> rates;         // row-normalized; zero rows stay zero

    std::int64_t count(int t, int p) const { return counts[t * n_classes + p]; }
    double rate(int t, int p) const { return rates[t * n_classes + p]; }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& pred,
                                 const std::vector<int>& truth, int n_classes);

// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
// C1=(0.01)^2, C2=(0.03)^2, averaged over channels and space. Inputs are
// (1,C,H,W) or (C,H,W)-like tensors with values in [0,1].
double ssim(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace scbn
