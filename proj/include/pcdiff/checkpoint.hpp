#pragma once

// Versioned binary checkpoint:
//
//   "PCDK" | u32 version=1 | u8 mode (0 guided, 1 unguided)
//   config: u8 label_encoding | u8 beta_only | u32 K | u32 d_z | u32 d_t
//           | u32 n_enc, u32 x n_enc | u32 n_dec, u32 x n_dec
//           | f64 beta_start | f64 beta_end | u32 T
//   u32 tensor_count, then per tensor: u32 rank | u32 x rank extents | f64 data
//   u8 has_optimizer; when 1: u64 train_step | f64 loss_ema | u64 adam_step
//           | u32 count | m tensors | v tensors
//
// All little-endian.

#include <filesystem>
#include <string>

#include "pcdiff/train.hpp"

namespace pcdiff {

std::string encode_checkpoint(const TrainState& state, bool include_optimizer = true);
/// Rebuilds the model from the config echo and fills every tensor. Without an
/// optimizer section the returned state has step 0 and empty moments.
TrainState decode_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path,
                     bool include_optimizer = true);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace pcdiff
