#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/network.hpp"
#include "mfx/objective.hpp"
#include "mfx/parameters.hpp"

namespace test {

template <class T = float>
mfx::BasicTensor<T> random_tensor(mfx::Shape shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    mfx::BasicTensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <class T = float>
mfx::BasicBatch<T> random_batch(const mfx::Model& model, std::size_t n, std::uint64_t seed) {
    mfx::Shape shape{n};
    for (auto d : model.input_shape()) shape.push_back(d);
    mfx::BasicBatch<T> b{random_tensor<T>(shape, seed), {}};
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    std::uniform_int_distribution<int> label(0, static_cast<int>(model.num_classes()) - 1);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(label(rng));
    return b;
}

inline mfx::Model mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes) {
    mfx::ModelSpec spec{{in}, classes, {}};
    for (auto h : hidden) {
        spec.layers.push_back(mfx::LayerDesc::dense(h));
        spec.layers.push_back(mfx::LayerDesc::relu());
    }
    spec.layers.push_back(mfx::LayerDesc::dense(classes));
    return mfx::compile(spec);
}

inline mfx::Model cnn(const std::string& arch, mfx::Shape input, std::size_t classes) {
    return mfx::compile(mfx::parse_architecture(arch, std::move(input), classes));
}

template <class T>
double max_abs_diff(const mfx::BasicTensor<T>& a, const mfx::BasicTensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// One-segment layout holding `k` free parameters.
inline std::shared_ptr<const mfx::ParamLayout> flat_layout(std::size_t k) {
    auto layout = std::make_shared<mfx::ParamLayout>();
    layout->add("w", {k});
    return layout;
}

// L(w) = 1/2 w^T A w + c^T w, A symmetric (row-major k x k).
class Quadratic final : public mfx::Objective<double> {
public:
    Quadratic(std::vector<double> a, std::vector<double> c) : a_(std::move(a)), c_(std::move(c)) {}

    std::size_t dim() const { return c_.size(); }

    double value(const mfx::BasicParameterVector<double>& p) const override {
        auto w = p.flat();
        double s = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < dim(); ++j) r += a_[i * dim() + j] * w[j];
            s += 0.5 * w[i] * r + c_[i] * w[i];
        }
        return s;
    }

    mfx::BasicParameterVector<double> gradient(const mfx::BasicParameterVector<double>& p) const override {
        mfx::BasicParameterVector<double> g(p.layout_ptr());
        auto w = p.flat();
        auto o = g.flat();
        for (std::size_t i = 0; i < dim(); ++i) {
            double r = c_[i];
            for (std::size_t j = 0; j < dim(); ++j) r += a_[i * dim() + j] * w[j];
            o[i] = r;
        }
        return g;
    }

    std::vector<double> times(const std::vector<double>& v) const {
        std::vector<double> out(dim(), 0.0);
        for (std::size_t i = 0; i < dim(); ++i)
            for (std::size_t j = 0; j < dim(); ++j) out[i] += a_[i * dim() + j] * v[j];
        return out;
    }

private:
    std::vector<double> a_;
    std::vector<double> c_;
};

// Counts value() calls of a wrapped objective.
template <class T>
class CountingObjective final : public mfx::Objective<T> {
public:
    explicit CountingObjective(const mfx::Objective<T>& inner) : inner_(inner) {}

    double value(const mfx::BasicParameterVector<T>& p) const override {
        ++calls;
        return inner_.value(p);
    }
    mfx::BasicParameterVector<T> gradient(const mfx::BasicParameterVector<T>& p) const override {
        return inner_.gradient(p);
    }

    mutable std::size_t calls = 0;

private:
    const mfx::Objective<T>& inner_;
};

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace test
