#pragma once

#include "scbn/geodata.hpp"
#include "scbn/loss.hpp"
#include "scbn/model.hpp"

namespace scbn {

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 5e-5;
    int max_epochs = 500;
    double early_stop_delta = 1e-3;
    int patience = 50;
    double gamma = 2.0;
    DilationSchedule<float> schedule;
    double holdout_rate = 0.5;
    std::uint64_t seed = 0;
    int eval_every = 1;
    double clip_norm = 5.0;
    bool verbose = true;

    void validate() const {
        require(batch_size >= 1 && max_epochs >= 1 && patience >= 1 && eval_every >= 1,
                "train config: counts must be positive");
        require(patience <= max_epochs, "train config: patience > max_epochs");
        require(learning_rate > 0 && early_stop_delta > 0 && clip_norm > 0,
                "train config: rates must be positive");
        require(holdout_rate >= 0.0 && holdout_rate < 1.0,
                "train config: holdout_rate must be in [0,1)");
        require(gamma >= 0.0, "train config: gamma must be >= 0");
        schedule.validate();
    }
};

struct TrainResult {
    Checkpoint<float> ckpt;
    TrainHistory history;
};

// Minibatch Adam on the dilation-augmented focal loss with per-epoch
// conditioning hold-out and early stopping on test weighted accuracy.
// Returns the best-test-accuracy checkpoint.
TrainResult train(Checkpoint<float> init, const PatchSet& train_patches,
                  const PatchSet& test_patches, const TrainConfig& cfg);

// Warm start from a pre-trained checkpoint; re-initializes the class head
// when the vocabulary differs.
TrainResult finetune(const Checkpoint<float>& pretrained, const PatchSet& train_patches,
                     const PatchSet& test_patches, std::vector<std::string> new_vocab,
                     const TrainConfig& cfg);

// History CSV, one row per epoch. Timing stays out of the file so reruns with
// one seed are byte-identical.
void save_history_csv(const TrainHistory& history, const std::string& path);

// Inverse-frequency focal-loss weights from the train targets.
FocalLossConfig<float> loss_config_for(const PatchSet& train_patches, int n_classes,
                                       double gamma);

}  // namespace scbn
