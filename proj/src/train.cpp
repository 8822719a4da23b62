#include "scbn/train.hpp"

#include "scbn/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace scbn {

namespace {

// Batched tensors assembled from a set of patches.
struct Batch {
    Tensor<float> aux;
    Tensor<float> cond_probs;
    Tensor<float> target_probs;
    Tensor<float> target_valid;
};

Batch assemble(const PatchSet& ps, const std::vector<std::size_t>& idx,
               const std::vector<SparseProbMasks>& cond) {
    const int P = ps.patch_size;
    const int b = int(idx.size());
    const int c_aux = ps.patches.front().aux.shape.c;
    const int c_cls = ps.patches.front().target.n_classes();
    Batch out;
    out.aux = Tensor<float>(Shape{b, c_aux, P, P});
    out.cond_probs = Tensor<float>(Shape{b, c_cls, P, P});
    out.target_probs = Tensor<float>(Shape{b, c_cls, P, P});
    out.target_valid = Tensor<float>(Shape{b, 1, P, P});
    const std::int64_t aplane = std::int64_t(c_aux) * P * P;
    const std::int64_t cplane = std::int64_t(c_cls) * P * P;
    const std::int64_t vplane = std::int64_t(P) * P;
    for (int i = 0; i < b; ++i) {
        const Patch& p = ps.patches[idx[std::size_t(i)]];
        out.aux.data.segment(i * aplane, aplane) = p.aux.data;
        out.cond_probs.data.segment(i * cplane, cplane) = cond[idx[std::size_t(i)]].probs.data;
        out.target_probs.data.segment(i * cplane, cplane) = p.target.probs.data;
        out.target_valid.data.segment(i * vplane, vplane) = p.target.valid.data;
    }
    return out;
}

struct EvalMetrics {
    double acc = 0.0;
    double ssim_val = 0.0;
    bool have_pixels = false;
};

// Deterministic forward per patch; accuracy over target-valid pixels, SSIM
// between the predicted probabilities and the renormalized 5x5-dilated target.
EvalMetrics evaluate_patches(Checkpoint<float>& ckpt, const PatchSet& ps,
                             bool constrained, const std::vector<double>& class_weights) {
    std::vector<int> pred, truth;
    double ssim_sum = 0.0;
    int ssim_n = 0;
    std::mt19937_64 rng(0);
    for (const Patch& p : ps.patches) {
        const Tensor<float>& masks_in =
            constrained ? p.cond.probs
                        : zero_masks<float>(1, p.target.n_classes(), ps.patch_size,
                                            ps.patch_size);
        Tensor<float> probs =
            forward(ckpt, p.aux, masks_in, ForwardMode::deterministic, rng);
        const int C = probs.shape.c, P = ps.patch_size;
        const std::int64_t plane = std::int64_t(P) * P;
        const std::vector<int> tl = argmax_labels(p.target);
        for (std::int64_t q = 0; q < plane; ++q) {
            if (tl[std::size_t(q)] < 0) continue;
            int best = 0;
            float bv = probs.data[q];
            for (int c = 1; c < C; ++c)
                if (probs.data[c * plane + q] > bv) {
                    bv = probs.data[c * plane + q];
                    best = c;
                }
            pred.push_back(best);
            truth.push_back(tl[std::size_t(q)]);
        }
        Tensor<float> dv = dilate_plain(p.target.valid, 5);
        Tensor<float> dt = renorm_target(dilate_plain(p.target.probs, 5), dv);
        ssim_sum += ssim(probs, dt);
        ++ssim_n;
    }
    EvalMetrics m;
    m.have_pixels = !truth.empty();
    if (m.have_pixels) m.acc = weighted_accuracy(pred, truth, class_weights);
    if (ssim_n) m.ssim_val = ssim_sum / ssim_n;
    return m;
}

double global_grad_norm(Graph<float>& g, const std::map<std::string, Var>& vars) {
    double sq = 0.0;
    for (const auto& [name, v] : vars)
        if (g.has_grad(v)) sq += double(g.grad(v).data.square().sum());
    return std::sqrt(sq);
}

}  // namespace

FocalLossConfig<float> loss_config_for(const PatchSet& train_patches, int n_classes,
                                       double gamma) {
    std::vector<int> labels;
    for (const Patch& p : train_patches.patches)
        for (int l : argmax_labels(p.target))
            if (l >= 0) labels.push_back(l);
    FocalLossConfig<float> cfg;
    cfg.gamma = float(gamma);
    std::vector<double> w = labels.empty() ? std::vector<double>(n_classes, 1.0)
                                           : inverse_frequency_weights(labels, n_classes);
    for (double& v : w)
        if (v == 0.0) v = 1.0;  // absent classes keep a neutral weight
    cfg.class_weights.assign(w.begin(), w.end());
    return cfg;
}

TrainResult train(Checkpoint<float> init, const PatchSet& train_patches,
                  const PatchSet& test_patches, const TrainConfig& cfg) {
    cfg.validate();
    require(!train_patches.patches.empty(), "train: no training patches");
    const int n_classes = init.arch.n_classes;
    require(train_patches.patches.front().target.n_classes() == n_classes,
            "train: patch classes != model classes");
    require(train_patches.patches.front().aux.shape.c == init.arch.n_aux_channels,
            "train: patch aux channels != model aux channels");

    const FocalLossConfig<float> loss_cfg =
        loss_config_for(train_patches, n_classes, cfg.gamma);
    std::vector<double> wacc_weights(loss_cfg.class_weights.begin(),
                                     loss_cfg.class_weights.end());

    TrainResult res;
    res.ckpt = std::move(init);
    Checkpoint<float>& ckpt = res.ckpt;

    ParamStore<float> best_store = ckpt.store;
    double best_acc = -1.0;
    double stop_ref = -1.0;
    int best_epoch = 0;
    int since_improve = 0;
    double last_train_acc = 0, last_test_acc = 0, last_train_ssim = 0, last_test_ssim = 0;

    const std::size_t n_patches = train_patches.patches.size();
    std::vector<std::size_t> order(n_patches);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 erng(cfg.seed * 1000003ull + std::uint64_t(epoch));

        // fresh conditioning hold-out for every patch
        std::vector<SparseProbMasks> cond(n_patches);
        for (std::size_t i = 0; i < n_patches; ++i)
            cond[i] =
                conditioning_holdout(train_patches.patches[i].cond, cfg.holdout_rate, erng)
                    .first;

        std::shuffle(order.begin(), order.end(), erng);

        double loss_sum = 0.0;
        int n_batches = 0;
        for (std::size_t at = 0; at < n_patches; at += std::size_t(cfg.batch_size)) {
            std::vector<std::size_t> idx(
                order.begin() + std::ptrdiff_t(at),
                order.begin() + std::ptrdiff_t(std::min(at + std::size_t(cfg.batch_size),
                                                        n_patches)));
            Batch b = assemble(train_patches, idx, cond);

            Graph<float> g;
            ParamBinding<float> p{&ckpt.store, &g, true, {}};
            Var aux = g.constant(std::move(b.aux));
            Var masks = g.constant(std::move(b.cond_probs));
            Var probs = forward_graph(ckpt, p, aux, masks, ForwardMode::train, erng);
            Var loss;
            try {
                loss = dilated_fcce(g, probs, b.target_probs, b.target_valid,
                                    cfg.schedule, loss_cfg);
            } catch (const NumericError&) {
                continue;  // batch without any supervised pixel
            }
            const double lv = double(g.value(loss).data[0]);
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(n_batches));
            loss_sum += lv;
            ++n_batches;
            g.backward(loss);

            const double norm = global_grad_norm(g, p.vars);
            const float clip =
                norm > cfg.clip_norm ? float(cfg.clip_norm / norm) : 1.f;
            for (auto& [name, v] : p.vars) {
                if (!g.has_grad(v)) continue;
                Tensor<float> grad = g.grad(v);
                if (clip != 1.f) grad.data *= clip;
                auto it = ckpt.opt.find(name);
                if (it == ckpt.opt.end())
                    it = ckpt.opt
                             .emplace(name, AdamState<float>::init(
                                                grad.shape, float(cfg.learning_rate)))
                             .first;
                adam_step(ckpt.store.param(name), grad, it->second, name);
            }
        }

        const double loss_mean = n_batches ? loss_sum / n_batches : 0.0;
        if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
            EvalMetrics tr = evaluate_patches(ckpt, train_patches, true, wacc_weights);
            EvalMetrics te = evaluate_patches(ckpt, test_patches, false, wacc_weights);
            last_train_acc = tr.acc;
            last_train_ssim = tr.ssim_val;
            last_test_acc = te.acc;
            last_test_ssim = te.ssim_val;

            if (te.acc > best_acc) {
                best_acc = te.acc;
                best_epoch = epoch;
                best_store = ckpt.store;
            }
            if (te.acc > stop_ref + cfg.early_stop_delta) {
                stop_ref = te.acc;
                since_improve = 0;
            } else {
                ++since_improve;
            }
        }

        HistoryRow row;
        row.epoch = epoch;
        row.loss = loss_mean;
        row.train_acc = last_train_acc;
        row.test_acc = last_test_acc;
        row.train_ssim = last_train_ssim;
        row.test_ssim = last_test_ssim;
        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.rows.push_back(row);
        ckpt.epoch = epoch;

        if (cfg.verbose)
            std::printf("epoch %4d  loss %.5f  train_acc %.4f  test_acc %.4f  ssim %.4f\n",
                        epoch, loss_mean, last_train_acc, last_test_acc, last_test_ssim);

        if (since_improve >= cfg.patience) break;
    }

    ckpt.store = best_store;
    ckpt.best_test_acc = std::max(best_acc, 0.0);
    ckpt.epoch = best_epoch;
    ckpt.history = res.history;
    return res;
}

TrainResult finetune(const Checkpoint<float>& pretrained, const PatchSet& train_patches,
                     const PatchSet& test_patches, std::vector<std::string> new_vocab,
                     const TrainConfig& cfg) {
    Checkpoint<float> start = pretrained;
    if (new_vocab != pretrained.vocab) {
        std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        start = reinit_head(pretrained, int(new_vocab.size()), rng, new_vocab);
    }
    start.opt.clear();
    start.history = TrainHistory{};
    TrainResult res = train(std::move(start), train_patches, test_patches, cfg);
    res.history.tag = "finetune";
    res.ckpt.history.tag = "finetune";
    return res;
}

void save_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path);
    require(bool(f), "cannot open history CSV for writing: " + path);
    f << "epoch,loss,train_acc,test_acc,train_ssim,test_ssim\n";
    char buf[256];
    for (const HistoryRow& r : history.rows) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.loss,
                      r.train_acc, r.test_acc, r.train_ssim, r.test_ssim);
        f << buf;
    }
}

}  // namespace scbn
