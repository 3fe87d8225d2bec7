#include "mfx/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfx {

namespace {

constexpr std::size_t kTaps = 9;

template <class T>
void check_call(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs) {
    if (params.layout_ptr() != model.layout()) require_same_layout(*model.layout(), params.layout(), "parameters");
    const Shape& want = model.input_shape();
    const Shape& got = inputs.shape();
    bool ok = got.size() == want.size() + 1;
    for (std::size_t i = 0; ok && i < want.size(); ++i) ok = got[i + 1] == want[i];
    if (!ok)
        throw ShapeError("layer 0 input", "expected (batch)x" + shape_to_string(want) + ", got " +
                                              shape_to_string(got));
}

template <class T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, T* col) {
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        const T* xc = x + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t oy = 0; oy < h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - 1;
                    T* out = row + oy * w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(out, out + w, T{0});
                        continue;
                    }
                    const T* in = xc + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - 1;
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0}
                                                                                 : in[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* dx) {
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        T* dc = dx + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t oy = 0; oy < h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* out = dc + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        out[ix] += row[oy * w + ox];
                    }
                }
            }
        }
    }
}

// Activations of every layer boundary; acts[0] is the input, acts[i + 1] the
// output of layer i.
template <class T>
struct Trace {
    std::size_t batch = 0;
    std::vector<std::vector<T>> acts;
    std::vector<std::vector<std::uint32_t>> argmax;  // per max-pool layer
};

template <class T>
Trace<T> run_forward(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs) {
    check_call(model, params, inputs);
    Trace<T> tr;
    tr.batch = inputs.dim(0);
    const std::size_t n = tr.batch;
    const auto& layers = model.layers();
    tr.acts.resize(layers.size() + 1);
    tr.argmax.resize(layers.size());
    tr.acts[0].assign(inputs.data().begin(), inputs.data().end());
    std::vector<T> col;

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& L = layers[li];
        const std::vector<T>& x = tr.acts[li];
        std::vector<T>& y = tr.acts[li + 1];
        const std::size_t in_sz = shape_size(L.in_shape), out_sz = shape_size(L.out_shape);
        y.assign(n * out_sz, T{0});
        switch (L.desc.kind) {
            case LayerKind::Dense: {
                auto W = params.segment(static_cast<std::size_t>(L.weight_segment));
                auto b = params.segment(static_cast<std::size_t>(L.bias_segment));
                const std::size_t in = L.desc.in, out = L.desc.out;
                for (std::size_t e = 0; e < n; ++e) {
                    T* yr = y.data() + e * out;
                    const T* xr = x.data() + e * in;
                    std::copy(b.begin(), b.end(), yr);
                    for (std::size_t i = 0; i < in; ++i) {
                        const T xi = xr[i];
                        const T* wr = W.data() + i * out;
                        for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
                    }
                }
                break;
            }
            case LayerKind::Conv2D: {
                auto W = params.segment(static_cast<std::size_t>(L.weight_segment));
                auto b = params.segment(static_cast<std::size_t>(L.bias_segment));
                const std::size_t cin = L.desc.in, cout = L.desc.out;
                const std::size_t h = L.in_shape[1], w = L.in_shape[2], hw = h * w, K = cin * kTaps;
                col.resize(K * hw);
                for (std::size_t e = 0; e < n; ++e) {
                    im2col(x.data() + e * in_sz, cin, h, w, col.data());
                    T* ye = y.data() + e * out_sz;
                    for (std::size_t co = 0; co < cout; ++co) {
                        T* yr = ye + co * hw;
                        std::fill(yr, yr + hw, b[co]);
                        const T* wr = W.data() + co * K;
                        for (std::size_t k = 0; k < K; ++k) {
                            const T wk = wr[k];
                            const T* ck = col.data() + k * hw;
                            for (std::size_t p = 0; p < hw; ++p) yr[p] += wk * ck[p];
                        }
                    }
                }
                break;
            }
            case LayerKind::MaxPool: {
                const std::size_t c = L.in_shape[0], h = L.in_shape[1], w = L.in_shape[2];
                const std::size_t oh = L.out_shape[1], ow = L.out_shape[2], k = L.desc.pool;
                auto& idx = tr.argmax[li];
                idx.assign(n * out_sz, 0);
                for (std::size_t e = 0; e < n; ++e) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const T* xc = x.data() + e * in_sz + ch * h * w;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                std::size_t best = (oy * k) * w + ox * k;
                                for (std::size_t dy = 0; dy < k; ++dy)
                                    for (std::size_t dx = 0; dx < k; ++dx) {
                                        const std::size_t p = (oy * k + dy) * w + ox * k + dx;
                                        if (xc[p] > xc[best]) best = p;
                                    }
                                const std::size_t o = e * out_sz + (ch * oh + oy) * ow + ox;
                                y[o] = xc[best];
                                idx[o] = static_cast<std::uint32_t>(ch * h * w + best);
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
                break;
            case LayerKind::Flatten: y = x; break;
        }
    }
    return tr;
}

template <class T>
void run_backward(const Model& model, const BasicParameterVector<T>& params, const Trace<T>& tr,
                  std::vector<T> dy, BasicParameterVector<T>* pgrad, std::vector<T>* dinput) {
    const std::size_t n = tr.batch;
    const auto& layers = model.layers();
    std::vector<T> col, dcol;
    // Layers below the first parameterized one only matter for input gradients.
    const std::size_t stop = dinput ? 0 : (model.param_layers().empty() ? layers.size() : model.param_layers().front());

    for (std::size_t li = layers.size(); li-- > stop;) {
        const auto& L = layers[li];
        const std::vector<T>& x = tr.acts[li];
        const std::size_t in_sz = shape_size(L.in_shape), out_sz = shape_size(L.out_shape);
        const bool need_dx = dinput != nullptr || li > stop;
        std::vector<T> dx;
        if (need_dx) dx.assign(n * in_sz, T{0});
        switch (L.desc.kind) {
            case LayerKind::Dense: {
                auto W = params.segment(static_cast<std::size_t>(L.weight_segment));
                const std::size_t in = L.desc.in, out = L.desc.out;
                if (pgrad) {
                    auto dW = pgrad->segment(static_cast<std::size_t>(L.weight_segment));
                    auto db = pgrad->segment(static_cast<std::size_t>(L.bias_segment));
                    for (std::size_t e = 0; e < n; ++e) {
                        const T* dyr = dy.data() + e * out;
                        const T* xr = x.data() + e * in;
                        for (std::size_t i = 0; i < in; ++i) {
                            const T xi = xr[i];
                            T* dwr = dW.data() + i * out;
                            for (std::size_t o = 0; o < out; ++o) dwr[o] += xi * dyr[o];
                        }
                        for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
                    }
                }
                if (need_dx) {
                    for (std::size_t e = 0; e < n; ++e) {
                        const T* dyr = dy.data() + e * out;
                        T* dxr = dx.data() + e * in;
                        for (std::size_t i = 0; i < in; ++i) {
                            const T* wr = W.data() + i * out;
                            T acc{0};
                            for (std::size_t o = 0; o < out; ++o) acc += dyr[o] * wr[o];
                            dxr[i] = acc;
                        }
                    }
                }
                break;
            }
            case LayerKind::Conv2D: {
                auto W = params.segment(static_cast<std::size_t>(L.weight_segment));
                const std::size_t cin = L.desc.in, cout = L.desc.out;
                const std::size_t h = L.in_shape[1], w = L.in_shape[2], hw = h * w, K = cin * kTaps;
                col.resize(K * hw);
                if (need_dx) dcol.resize(K * hw);
                for (std::size_t e = 0; e < n; ++e) {
                    const T* dye = dy.data() + e * out_sz;
                    if (pgrad) {
                        im2col(x.data() + e * in_sz, cin, h, w, col.data());
                        auto dW = pgrad->segment(static_cast<std::size_t>(L.weight_segment));
                        auto db = pgrad->segment(static_cast<std::size_t>(L.bias_segment));
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* dyr = dye + co * hw;
                            T* dwr = dW.data() + co * K;
                            for (std::size_t k = 0; k < K; ++k) {
                                const T* ck = col.data() + k * hw;
                                T acc{0};
                                for (std::size_t p = 0; p < hw; ++p) acc += dyr[p] * ck[p];
                                dwr[k] += acc;
                            }
                            T bacc{0};
                            for (std::size_t p = 0; p < hw; ++p) bacc += dyr[p];
                            db[co] += bacc;
                        }
                    }
                    if (need_dx) {
                        std::fill(dcol.begin(), dcol.end(), T{0});
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* dyr = dye + co * hw;
                            const T* wr = W.data() + co * K;
                            for (std::size_t k = 0; k < K; ++k) {
                                const T wk = wr[k];
                                T* dk = dcol.data() + k * hw;
                                for (std::size_t p = 0; p < hw; ++p) dk[p] += wk * dyr[p];
                            }
                        }
                        col2im_add(dcol.data(), cin, h, w, dx.data() + e * in_sz);
                    }
                }
                break;
            }
            case LayerKind::MaxPool: {
                if (need_dx) {
                    const auto& idx = tr.argmax[li];
                    for (std::size_t e = 0; e < n; ++e)
                        for (std::size_t o = 0; o < out_sz; ++o)
                            dx[e * in_sz + idx[e * out_sz + o]] += dy[e * out_sz + o];
                }
                break;
            }
            case LayerKind::ReLU: {
                if (need_dx) {
                    const std::vector<T>& y = tr.acts[li + 1];
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = y[i] > T{0} ? dy[i] : T{0};
                }
                break;
            }
            case LayerKind::Flatten:
                if (need_dx) dx = std::move(dy);
                break;
        }
        dy = std::move(dx);
    }
    if (dinput) *dinput = std::move(dy);
}

template <class T>
BasicTensor<T> logits_of(const Model& model, Trace<T>& tr) {
    std::vector<T> out = std::move(tr.acts.back());
    BasicTensor<T> logits({tr.batch, model.num_classes()}, std::move(out));
    return logits;
}

void check_labels(const std::vector<int>& labels, std::size_t batch, std::size_t classes) {
    if (labels.size() != batch)
        throw ShapeError("batch", std::to_string(labels.size()) + " labels for " + std::to_string(batch) + " inputs");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw InvalidArgument("label " + std::to_string(labels[i]) + " at example " + std::to_string(i) +
                                  " outside [0, " + std::to_string(classes) + ")");
}

// Per-example softmax cross-entropy; optionally writes d(mean loss)/d(logits).
template <class T>
double cross_entropy(const std::vector<T>& logits, const std::vector<int>& labels, std::size_t classes,
                     std::vector<T>* dlogits) {
    const std::size_t n = labels.size();
    double total = 0.0;
    if (dlogits) dlogits->assign(logits.size(), T{0});
    const T inv_n = T{1} / static_cast<T>(n);
    for (std::size_t e = 0; e < n; ++e) {
        const T* z = logits.data() + e * classes;
        T m = z[0];
        for (std::size_t c = 0; c < classes; ++c) {
            if (!std::isfinite(z[c]))
                throw NumericError("logits", "non-finite logit at example " + std::to_string(e) + ", class " +
                                                 std::to_string(c));
            m = std::max(m, z[c]);
        }
        T s{0};
        for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - m);
        const T lse = m + std::log(s);
        total += static_cast<double>(lse - z[labels[e]]);
        if (dlogits) {
            T* d = dlogits->data() + e * classes;
            for (std::size_t c = 0; c < classes; ++c) d[c] = std::exp(z[c] - lse) * inv_n;
            d[labels[e]] -= inv_n;
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

template <class T>
BasicTensor<T> forward(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs) {
    auto tr = run_forward(model, params, inputs);
    return logits_of(model, tr);
}

template <class T>
double loss(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch) {
    check_labels(batch.labels, batch.inputs.rank() ? batch.inputs.dim(0) : 0, model.num_classes());
    auto tr = run_forward(model, params, batch.inputs);
    return cross_entropy<T>(tr.acts.back(), batch.labels, model.num_classes(), nullptr);
}

template <class T>
LossAndGrad<T> loss_and_grad(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch) {
    check_labels(batch.labels, batch.inputs.rank() ? batch.inputs.dim(0) : 0, model.num_classes());
    auto tr = run_forward(model, params, batch.inputs);
    std::vector<T> dlogits;
    LossAndGrad<T> out;
    out.loss = cross_entropy<T>(tr.acts.back(), batch.labels, model.num_classes(), &dlogits);
    out.grad = BasicParameterVector<T>(model.layout());
    run_backward(model, params, tr, std::move(dlogits), &out.grad, static_cast<std::vector<T>*>(nullptr));
    for (T g : out.grad.flat())
        if (!std::isfinite(g)) throw NumericError("gradient", "non-finite gradient value");
    return out;
}

template <class T>
Backprop<T> backprop(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs,
                     const BasicTensor<T>& dlogits, bool want_input_grad) {
    auto tr = run_forward(model, params, inputs);
    if (dlogits.shape() != Shape{tr.batch, model.num_classes()})
        throw ShapeError("logits", "seed gradient has shape " + shape_to_string(dlogits.shape()));
    Backprop<T> out;
    out.param_grad = BasicParameterVector<T>(model.layout());
    std::vector<T> dinput;
    std::vector<T> seed(dlogits.data().begin(), dlogits.data().end());
    run_backward(model, params, tr, std::move(seed), &out.param_grad, want_input_grad ? &dinput : nullptr);
    out.logits = logits_of(model, tr);
    if (want_input_grad) out.input_grad = BasicTensor<T>(inputs.shape(), std::move(dinput));
    return out;
}

template <class T>
std::vector<int> predict(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs) {
    auto logits = forward(model, params, inputs);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t e = 0; e < n; ++e) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (logits[e * c + k] > logits[e * c + best]) best = k;
        out[e] = static_cast<int>(best);
    }
    return out;
}

#define MFX_INSTANTIATE(T)                                                                                      \
    template BasicTensor<T> forward<T>(const Model&, const BasicParameterVector<T>&, const BasicTensor<T>&);     \
    template double loss<T>(const Model&, const BasicParameterVector<T>&, const BasicBatch<T>&);                \
    template LossAndGrad<T> loss_and_grad<T>(const Model&, const BasicParameterVector<T>&, const BasicBatch<T>&); \
    template Backprop<T> backprop<T>(const Model&, const BasicParameterVector<T>&, const BasicTensor<T>&,        \
                                     const BasicTensor<T>&, bool);                                              \
    template std::vector<int> predict<T>(const Model&, const BasicParameterVector<T>&, const BasicTensor<T>&);

MFX_INSTANTIATE(float)
MFX_INSTANTIATE(double)
#undef MFX_INSTANTIATE

}  // namespace mfx
