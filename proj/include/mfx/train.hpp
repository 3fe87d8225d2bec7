#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mfx/dataset.hpp"
#include "mfx/model.hpp"
#include "mfx/optimizer.hpp"

namespace mfx {

struct TrainSettings {
    OptimizerSettings optimizer;
    std::size_t batch_size = 512;
    std::size_t patience = 5;
    std::size_t max_epochs = 200;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_sum = 0.0;  // sum of per-batch training losses (SoTL-E)
    std::size_t batches = 0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

// Everything needed to continue training bit-identically.
struct TrainState {
    Model model;
    ParameterVector params;
    OptimizerState optimizer;
    std::mt19937_64 rng;
    std::size_t epoch = 0;
    std::vector<EpochRecord> history;
};

TrainState start_training(Model model, ParameterVector params, const OptimizerSettings& settings, std::uint64_t seed);

// One pass over `train` in a fresh shuffled order with mini-batches of
// `batch_size` (the last one may be smaller). Returns the per-batch losses.
std::vector<double> train_epoch(TrainState& state, const Dataset& train, std::size_t batch_size);

// Fraction of examples whose argmax logit (lowest index on ties) matches the
// label. Evaluated in chunks.
double validate_accuracy(const Model& model, const ParameterVector& params, const Dataset& dataset,
                         std::size_t chunk = 1000);

// Patience rule on validation accuracy: stop once `patience` consecutive
// epochs fail to beat the best value seen so far.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    // Returns true when training should stop after this epoch.
    bool observe(std::size_t epoch, double accuracy);
    bool improved() const noexcept { return improved_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best_accuracy() const noexcept { return best_; }

private:
    std::size_t patience_;
    std::size_t since_best_ = 0;
    std::size_t best_epoch_ = 0;
    double best_ = -1.0;
    bool improved_ = false;
};

struct BaseModel {
    Model model;
    ParameterVector params;  // best-validation parameters, not the last ones
    double accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
};

BaseModel train_to_early_stop(const Model& model, const ParameterVector& init, const DataSplit& data,
                              const TrainSettings& settings, std::uint64_t seed);

}  // namespace mfx
