#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfx/network.hpp"

namespace mfx {

struct Dataset {
    Batch data;  // inputs (N, ...shape), labels
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return data.labels.size(); }
    Shape example_shape() const { return Shape(data.inputs.shape().begin() + 1, data.inputs.shape().end()); }
};

enum class DatasetKind { CifarBinary, SyntheticBlobs };

struct DatasetSource {
    DatasetKind kind = DatasetKind::SyntheticBlobs;

    // cifar-binary: record files, concatenated in order. Each record holds
    // `label_bytes` label bytes (1 for CIFAR-10, 2 for CIFAR-100 where the
    // last one is the fine label) followed by 3072 pixel bytes in
    // channel-major 3x32x32 order.
    std::vector<std::filesystem::path> paths;
    std::size_t label_bytes = 1;

    // synthetic-blobs: each class is a mixture of `modes_per_class` Gaussian
    // clusters with unit-variance centres and `spread` within-cluster noise.
    Shape shape{1, 8, 8};
    std::size_t modes_per_class = 1;
    double spread = 1.0;
    std::uint64_t generator_seed = 0;

    std::size_t num_classes = 10;
    std::size_t train_size = 4000;
    std::size_t val_size = 1000;
};

struct DataSplit {
    Dataset train;
    Dataset val;
    std::vector<double> channel_mean;  // train statistics used for normalisation
    std::vector<double> channel_std;
};

// Reads CIFAR binary records (pixels scaled to [0, 1]). `max_records == 0`
// reads everything. Throws FormatError with the byte offset of a truncated
// record or an out-of-range label.
Dataset read_cifar_binary(const std::filesystem::path& path, std::size_t num_classes, std::size_t label_bytes = 1,
                          std::size_t max_records = 0);

Dataset make_synthetic_blobs(const DatasetSource& source, std::size_t count);

// Loads or generates the examples, shuffles them under `shuffle_seed`, splits
// off disjoint train/validation sets and normalises both per channel with
// train-set statistics.
DataSplit load_dataset(const DatasetSource& source, std::uint64_t shuffle_seed);

Batch gather(const Dataset& dataset, std::span<const std::size_t> indices);
Batch slice(const Dataset& dataset, std::size_t begin, std::size_t end);

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

// Fingerprint of one example's input values, for disjointness checks.
std::uint64_t example_fingerprint(const Dataset& dataset, std::size_t index);

}  // namespace mfx
