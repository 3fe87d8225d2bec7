#include "mfx/train.hpp"

#include <algorithm>

#include "mfx/network.hpp"

namespace mfx {

TrainState start_training(Model model, ParameterVector params, const OptimizerSettings& settings,
                          std::uint64_t seed) {
    auto opt = make_optimizer<float>(settings, params.size());
    return TrainState{std::move(model), std::move(params), std::move(opt), std::mt19937_64(seed), 0, {}};
}

std::vector<double> train_epoch(TrainState& state, const Dataset& train, std::size_t batch_size) {
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (train.size() == 0) throw InvalidArgument("empty training set");
    const auto order = shuffled_indices(train.size(), state.rng);
    const std::size_t epoch = state.epoch + 1;
    std::vector<double> losses;
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch_size, ++b) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        const Batch batch = gather(train, std::span(order).subspan(start, end - start));
        try {
            auto lg = loss_and_grad(state.model, state.params, batch);
            optimizer_step_inplace(state.optimizer, state.params, lg.grad);
            losses.push_back(lg.loss);
        } catch (const NumericError& e) {
            throw NumericError("training epoch " + std::to_string(epoch) + " batch " + std::to_string(b),
                               std::string("diverged: ") + e.what());
        }
    }
    state.epoch = epoch;
    return losses;
}

double validate_accuracy(const Model& model, const ParameterVector& params, const Dataset& dataset,
                         std::size_t chunk) {
    if (dataset.size() == 0) throw InvalidArgument("validate_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        const std::size_t end = std::min(dataset.size(), start + chunk);
        const Batch batch = slice(dataset, start, end);
        const auto pred = predict(model, params, batch.inputs);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

bool EarlyStopper::observe(std::size_t epoch, double accuracy) {
    improved_ = accuracy > best_;
    if (improved_) {
        best_ = accuracy;
        best_epoch_ = epoch;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    return since_best_ >= patience_;
}

BaseModel train_to_early_stop(const Model& model, const ParameterVector& init, const DataSplit& data,
                              const TrainSettings& settings, std::uint64_t seed) {
    if (settings.max_epochs == 0) throw InvalidArgument("max_epochs must be positive");
    auto state = start_training(model, init, settings.optimizer, seed);
    EarlyStopper stopper(settings.patience);
    BaseModel out{model, init, 0.0, 0, 0, {}};
    while (state.epoch < settings.max_epochs) {
        const auto losses = train_epoch(state, data.train, settings.batch_size);
        EpochRecord rec;
        rec.epoch = state.epoch;
        rec.batches = losses.size();
        for (double l : losses) rec.loss_sum += l;
        rec.val_accuracy = validate_accuracy(state.model, state.params, data.val);
        state.history.push_back(rec);
        const bool stop = stopper.observe(rec.epoch, rec.val_accuracy);
        if (stopper.improved()) out.params = state.params;
        if (stop) break;
    }
    out.accuracy = stopper.best_accuracy();
    out.best_epoch = stopper.best_epoch();
    out.epochs_run = state.epoch;
    out.history = std::move(state.history);
    return out;
}

}  // namespace mfx
