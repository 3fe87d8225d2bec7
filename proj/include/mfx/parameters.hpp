#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfx/error.hpp"
#include "mfx/tensor.hpp"

namespace mfx {

struct SegmentInfo {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const SegmentInfo&, const SegmentInfo&) = default;
};

// Ordered segment table shared by every parameter vector of one model.
class ParamLayout {
public:
    ParamLayout() = default;

    void add(std::string name, Shape shape) {
        SegmentInfo seg{std::move(name), std::move(shape), total_, 0};
        seg.size = shape_size(seg.shape);
        total_ += seg.size;
        segments_.push_back(std::move(seg));
    }

    const std::vector<SegmentInfo>& segments() const noexcept { return segments_; }
    const SegmentInfo& segment(std::size_t i) const { return segments_.at(i); }
    std::size_t num_segments() const noexcept { return segments_.size(); }
    std::size_t total_size() const noexcept { return total_; }

    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

private:
    std::vector<SegmentInfo> segments_;
    std::size_t total_ = 0;
};

// Flat, ordered view of all trainable weights. Storage is one contiguous
// buffer; segments are windows into it in layout order.
template <class T>
class BasicParameterVector {
public:
    using value_type = T;

    BasicParameterVector() = default;

    explicit BasicParameterVector(std::shared_ptr<const ParamLayout> layout)
        : layout_(std::move(layout)), data_(layout_->total_size(), T{0}) {}

    BasicParameterVector(std::shared_ptr<const ParamLayout> layout, std::vector<T> flat)
        : layout_(std::move(layout)), data_(std::move(flat)) {
        if (data_.size() != layout_->total_size())
            throw ShapeError("", "flat length " + std::to_string(data_.size()) +
                                     " does not match layout total " + std::to_string(layout_->total_size()));
    }

    const ParamLayout& layout() const { return *layout_; }
    const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }

    std::size_t size() const noexcept { return data_.size(); }
    std::size_t num_segments() const { return layout_->num_segments(); }

    std::span<T> flat() noexcept { return data_; }
    std::span<const T> flat() const noexcept { return data_; }

    std::span<T> segment(std::size_t i) {
        const auto& s = layout_->segment(i);
        return std::span<T>(data_).subspan(s.offset, s.size);
    }
    std::span<const T> segment(std::size_t i) const {
        const auto& s = layout_->segment(i);
        return std::span<const T>(data_).subspan(s.offset, s.size);
    }

    BasicTensor<T> segment_tensor(std::size_t i) const {
        auto seg = segment(i);
        return BasicTensor<T>(layout_->segment(i).shape, std::vector<T>(seg.begin(), seg.end()));
    }

    bool same_layout(const BasicParameterVector& other) const {
        return layout_ == other.layout_ || (layout_ && other.layout_ && *layout_ == *other.layout_);
    }

    friend bool operator==(const BasicParameterVector& a, const BasicParameterVector& b) {
        return a.same_layout(b) && a.data_ == b.data_;
    }

private:
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<T> data_;
};

using ParameterVector = BasicParameterVector<float>;

template <class T>
std::vector<T> flatten(const BasicParameterVector<T>& params) {
    auto f = params.flat();
    return std::vector<T>(f.begin(), f.end());
}

template <class T>
BasicParameterVector<T> unflatten(std::vector<T> flat, std::shared_ptr<const ParamLayout> layout) {
    return BasicParameterVector<T>(std::move(layout), std::move(flat));
}

template <class T, class U>
BasicParameterVector<U> cast_parameters(const BasicParameterVector<T>& params) {
    auto f = params.flat();
    return BasicParameterVector<U>(params.layout_ptr(), std::vector<U>(f.begin(), f.end()));
}

inline void require_same_layout(const ParamLayout& a, const ParamLayout& b, const char* what) {
    if (a.num_segments() != b.num_segments())
        throw ShapeError(what, "segment count mismatch (" + std::to_string(a.num_segments()) + " vs " +
                                   std::to_string(b.num_segments()) + ")");
    for (std::size_t i = 0; i < a.num_segments(); ++i)
        if (!(a.segment(i) == b.segment(i)))
            throw ShapeError(what, "segment " + a.segment(i).name + " " + shape_to_string(a.segment(i).shape) +
                                       " vs " + b.segment(i).name + " " + shape_to_string(b.segment(i).shape));
}

// alpha * a + (1 - alpha) * b, elementwise.
template <class T>
BasicParameterVector<T> lerp(const BasicParameterVector<T>& a, const BasicParameterVector<T>& b, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("lerp: alpha must lie in [0, 1]");
    if (!a.same_layout(b)) require_same_layout(a.layout(), b.layout(), "lerp");
    BasicParameterVector<T> out(a.layout_ptr());
    const T wa = static_cast<T>(alpha);
    const T wb = static_cast<T>(1.0 - alpha);
    auto fa = a.flat();
    auto fb = b.flat();
    auto fo = out.flat();
    for (std::size_t i = 0; i < fo.size(); ++i) fo[i] = wa * fa[i] + wb * fb[i];
    return out;
}

// FNV-1a over raw bytes; used to tag parameter vectors and batches in logs.
std::uint64_t fingerprint_bytes(const void* data, std::size_t len, std::uint64_t seed = 1469598103934665603ULL);

template <class T>
std::uint64_t fingerprint(const BasicParameterVector<T>& params) {
    auto f = params.flat();
    return fingerprint_bytes(f.data(), f.size() * sizeof(T));
}

}  // namespace mfx
