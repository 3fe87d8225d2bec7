#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/optimizer.hpp"
#include "mfx/train.hpp"

namespace mfx {

// Binary container, all integers and floats little-endian:
//
//   magic "MFXCKPT\0" | u32 version
//   u32 len, model spec text (serialize_spec)
//   u32 segment count, then per segment:
//       u32 len, name | u32 rank | u64 dims[rank] | f32 values[prod(dims)]
//   optimizer: u8 kind | f64 lr, beta1, beta2, eps, weight_decay | u64 step
//              u64 len, f32 first moment | u64 len, f32 second moment
//   u32 len, rng state text (std::mt19937_64 stream form)
//   u64 epoch
//   u64 history count, per entry: u64 epoch | f64 loss_sum | u64 batches | f64 val_accuracy
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelSpec spec;
    ParameterVector params;
    OptimizerState optimizer;
    std::string rng_state;
    std::uint64_t epoch = 0;
    std::vector<EpochRecord> history;
};

Checkpoint make_checkpoint(const TrainState& state);
// Rebuilds a training state that continues exactly where the checkpoint left off.
TrainState resume(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with byte offset) on bad magic, unknown version,
// truncation, trailing bytes, or segments that disagree with the model spec.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mfx
