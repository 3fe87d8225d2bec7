#pragma once

#include <cstdint>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/parameters.hpp"
#include "mfx/tensor.hpp"

namespace mfx {

template <class T>
struct BasicBatch {
    BasicTensor<T> inputs;   // (batch, ...input_shape)
    std::vector<int> labels;  // one class index per example

    std::size_t size() const noexcept { return labels.size(); }
};

using Batch = BasicBatch<float>;

template <class T>
std::uint64_t fingerprint(const BasicBatch<T>& batch) {
    auto d = batch.inputs.data();
    std::uint64_t h = fingerprint_bytes(d.data(), d.size() * sizeof(T));
    return fingerprint_bytes(batch.labels.data(), batch.labels.size() * sizeof(int), h);
}

template <class T>
BasicBatch<T> cast_batch(const BasicBatch<float>& batch) {
    auto d = batch.inputs.data();
    return {BasicTensor<T>(batch.inputs.shape(), std::vector<T>(d.begin(), d.end())), batch.labels};
}

// Logits of shape (batch, num_classes). Pure.
template <class T>
BasicTensor<T> forward(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs);

// Mean softmax cross-entropy over the batch.
template <class T>
double loss(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch);

template <class T>
struct LossAndGrad {
    double loss = 0.0;
    BasicParameterVector<T> grad;
};

template <class T>
LossAndGrad<T> loss_and_grad(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch);

template <class T>
BasicParameterVector<T> grad(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch) {
    return loss_and_grad(model, params, batch).grad;
}

template <class T>
struct Backprop {
    BasicTensor<T> logits;
    BasicParameterVector<T> param_grad;
    BasicTensor<T> input_grad;  // empty unless requested
};

// Reverse pass seeded with an arbitrary d(objective)/d(logits). Used for the
// loss gradient, input Jacobians and path-norm style scores.
template <class T>
Backprop<T> backprop(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs,
                     const BasicTensor<T>& dlogits, bool want_input_grad);

// Index of the largest logit per row; ties go to the lowest class index.
template <class T>
std::vector<int> predict(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs);

}  // namespace mfx
