#include "mfx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace mfx {

namespace {

constexpr std::size_t kCifarPixels = 3 * 32 * 32;

Dataset concat(std::vector<Dataset> parts) {
    if (parts.size() == 1) return std::move(parts.front());
    Dataset out;
    out.num_classes = parts.front().num_classes;
    Shape shape = parts.front().data.inputs.shape();
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    shape[0] = total;
    std::vector<float> values;
    values.reserve(shape_size(shape));
    for (const auto& p : parts) {
        values.insert(values.end(), p.data.inputs.data().begin(), p.data.inputs.data().end());
        out.data.labels.insert(out.data.labels.end(), p.data.labels.begin(), p.data.labels.end());
    }
    out.data.inputs = Tensor(shape, std::move(values));
    return out;
}

}  // namespace

Dataset read_cifar_binary(const std::filesystem::path& path, std::size_t num_classes, std::size_t label_bytes,
                          std::size_t max_records) {
    if (label_bytes < 1) throw InvalidArgument("cifar-binary: label_bytes must be at least 1");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t record = label_bytes + kCifarPixels;
    if (bytes.empty()) throw FormatError(0, path.string() + ": empty dataset file");
    if (bytes.size() % record != 0) {
        const std::size_t full = bytes.size() / record;
        throw FormatError(full * record, path.string() + ": truncated record " + std::to_string(full) + " (" +
                                             std::to_string(bytes.size() - full * record) + " of " +
                                             std::to_string(record) + " bytes)");
    }
    std::size_t count = bytes.size() / record;
    if (max_records) count = std::min(count, max_records);

    Dataset ds;
    ds.num_classes = num_classes;
    std::vector<float> values(count * kCifarPixels);
    ds.data.labels.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
        const std::size_t off = r * record;
        const std::size_t label = bytes[off + label_bytes - 1];
        if (label >= num_classes)
            throw FormatError(off + label_bytes - 1, path.string() + ": label " + std::to_string(label) +
                                                         " outside [0, " + std::to_string(num_classes) + ")");
        ds.data.labels[r] = static_cast<int>(label);
        const unsigned char* px = bytes.data() + off + label_bytes;
        float* dst = values.data() + r * kCifarPixels;
        for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = static_cast<float>(px[i]) / 255.0f;
    }
    ds.data.inputs = Tensor({count, 3, 32, 32}, std::move(values));
    return ds;
}

Dataset make_synthetic_blobs(const DatasetSource& src, std::size_t count) {
    if (src.num_classes < 2) throw InvalidArgument("synthetic-blobs needs at least 2 classes");
    if (src.modes_per_class < 1) throw InvalidArgument("synthetic-blobs needs at least 1 mode per class");
    if (!(src.spread >= 0.0)) throw InvalidArgument("synthetic-blobs spread must be non-negative");
    if (count == 0) throw InvalidArgument("synthetic-blobs: zero examples requested");
    const std::size_t dim = shape_size(src.shape);
    std::mt19937_64 rng(src.generator_seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t modes = src.num_classes * src.modes_per_class;
    std::vector<double> centres(modes * dim);
    for (auto& c : centres) c = normal(rng);

    Dataset ds;
    ds.num_classes = src.num_classes;
    Shape shape{count};
    shape.insert(shape.end(), src.shape.begin(), src.shape.end());
    std::vector<float> values(count * dim);
    ds.data.labels.resize(count);
    std::uniform_int_distribution<std::size_t> pick_mode(0, src.modes_per_class - 1);
    for (std::size_t e = 0; e < count; ++e) {
        // Balanced classes: example e belongs to class e mod C.
        const std::size_t cls = e % src.num_classes;
        const std::size_t mode = cls * src.modes_per_class + pick_mode(rng);
        ds.data.labels[e] = static_cast<int>(cls);
        const double* c = centres.data() + mode * dim;
        for (std::size_t i = 0; i < dim; ++i) values[e * dim + i] = static_cast<float>(c[i] + src.spread * normal(rng));
    }
    ds.data.inputs = Tensor(shape, std::move(values));
    return ds;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(idx[i - 1], idx[d(rng)]);
    }
    return idx;
}

Batch gather(const Dataset& dataset, std::span<const std::size_t> indices) {
    const std::size_t row = dataset.data.inputs.row_size();
    Shape shape = dataset.data.inputs.shape();
    shape[0] = indices.size();
    std::vector<float> values(indices.size() * row);
    std::vector<int> labels(indices.size());
    auto src = dataset.data.inputs.data();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= dataset.size()) throw InvalidArgument("gather: index out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * row), row,
                    values.begin() + static_cast<std::ptrdiff_t>(k * row));
        labels[k] = dataset.data.labels[i];
    }
    return {Tensor(shape, std::move(values)), std::move(labels)};
}

Batch slice(const Dataset& dataset, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    return gather(dataset, idx);
}

std::uint64_t example_fingerprint(const Dataset& dataset, std::size_t index) {
    const std::size_t row = dataset.data.inputs.row_size();
    return fingerprint_bytes(dataset.data.inputs.data().data() + index * row, row * sizeof(float));
}

DataSplit load_dataset(const DatasetSource& source, std::uint64_t shuffle_seed) {
    if (source.train_size == 0 || source.val_size == 0) throw InvalidArgument("train and validation sizes must be positive");
    const std::size_t needed = source.train_size + source.val_size;
    Dataset all;
    if (source.kind == DatasetKind::CifarBinary) {
        if (source.paths.empty()) throw InvalidArgument("cifar-binary source needs at least one path");
        std::vector<Dataset> parts;
        for (const auto& p : source.paths) parts.push_back(read_cifar_binary(p, source.num_classes, source.label_bytes));
        all = concat(std::move(parts));
    } else {
        all = make_synthetic_blobs(source, needed);
    }
    if (all.size() < needed)
        throw InvalidArgument("dataset has " + std::to_string(all.size()) + " examples, split needs " +
                              std::to_string(needed));

    std::mt19937_64 rng(shuffle_seed);
    const auto order = shuffled_indices(all.size(), rng);
    DataSplit split;
    split.train.num_classes = split.val.num_classes = all.num_classes;
    split.train.data = gather(all, std::span(order).subspan(0, source.train_size));
    split.val.data = gather(all, std::span(order).subspan(source.train_size, source.val_size));

    // Per-channel statistics over the training split; flat inputs count as one channel.
    const Shape ex = split.train.example_shape();
    const std::size_t channels = ex.size() == 3 ? ex[0] : 1;
    const std::size_t per_channel = shape_size(ex) / channels;
    split.channel_mean.assign(channels, 0.0);
    split.channel_std.assign(channels, 0.0);
    const auto tr = split.train.data.inputs.data();
    const std::size_t n = split.train.size();
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < per_channel; ++p)
                split.channel_mean[c] += tr[(e * channels + c) * per_channel + p];
    for (auto& m : split.channel_mean) m /= static_cast<double>(n * per_channel);
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < per_channel; ++p) {
                const double d = tr[(e * channels + c) * per_channel + p] - split.channel_mean[c];
                split.channel_std[c] += d * d;
            }
    for (auto& s : split.channel_std) {
        s = std::sqrt(s / static_cast<double>(n * per_channel));
        if (s < 1e-12) s = 1.0;
    }
    for (Dataset* d : {&split.train, &split.val}) {
        auto v = d->data.inputs.data();
        const std::size_t m = d->size();
        for (std::size_t e = 0; e < m; ++e)
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t p = 0; p < per_channel; ++p) {
                    float& x = v[(e * channels + c) * per_channel + p];
                    x = static_cast<float>((x - split.channel_mean[c]) / split.channel_std[c]);
                }
    }
    return split;
}

}  // namespace mfx
