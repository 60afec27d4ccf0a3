#ifndef AFNAS_TRAIN_HPP
#define AFNAS_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "afnas/data.hpp"
#include "afnas/genome.hpp"
#include "afnas/nn.hpp"

namespace afnas::train {

struct TrainConfig {
    int epochs = 30;
    double lr_initial = 0.01;
    std::vector<int> lr_drop_epochs = {15, 25}; // LR divided after these epochs
    double lr_drop_divisor = 10.0;
    double momentum = 0.9;
    bool nesterov = true;
    double grad_clip_norm = 1.0;
    int batch_size = 32;
    std::uint64_t seed = 1;
    bool balanced_sampling = true; // equal expected class frequency per batch
    bool augment = true;
    data::AugmentConfig augmentation;
    double bn_momentum = 0.99;
    bool eval_every_epoch = true; // validation loss/metrics per epoch
};

struct EpochStats {
    int epoch = 0; // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double max_post_clip_norm = 0.0;
    // NaN when validation was skipped or a metric was undefined.
    double val_loss = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double noise_specificity = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// Effective learning rate for a 1-based epoch index.
double lr_at(const TrainConfig& cfg, int epoch);

// Glorot-uniform init of conv and head weights (quantized once onto the
// weight grid), identity batchnorm.
void initialize_parameters(nn::QuantizedNetwork& net, std::uint64_t seed);

// Runs the full recipe on split.train, optionally evaluating split.validation
// each epoch. Deterministic per (net state, cfg).
TrainHistory train(nn::QuantizedNetwork& net, const data::DatasetSplit& split,
                   const TrainConfig& cfg);

// Mean BCE over windows in eval mode, batched to bound memory.
double eval_loss(nn::QuantizedNetwork& net, const std::vector<data::LabeledWindow>& windows,
                 int batch_size = 32);

double target_for(data::Label label); // AF -> 1, others -> 0

// Versioned binary checkpoint: genome text, every parameter as a 64-bit
// real, training history. Byte-identical for identical inputs.
void save_checkpoint(const std::string& path, const Genome& genome,
                     const nn::QuantizedNetwork& net, const TrainHistory& history);

struct Checkpoint {
    Genome genome;
    nn::QuantizedNetwork net;
    TrainHistory history;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace afnas::train

#endif
