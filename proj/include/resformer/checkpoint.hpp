// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/model.hpp"

#include <cstdint>
#include <string>

namespace resformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes parameters, batch-norm statistics and firing-rate EMAs.
///
/// Layout (little-endian): "RSCK", u32 version, u64 config digest, u64 echo
/// length + config echo, u64 tensor count, tensors (u32 name length, name,
/// u8 dtype 0=f32 1=f64, u32 rank, u64 dims, raw values), u64 EMA count, EMA
/// entries (u32 name length, name, u8 initialized, f64 value), then a u64
/// FNV-1a checksum of every preceding byte.
template <typename Scalar>
void save_checkpoint(Model<Scalar>& model, const std::string& path);

/// Restores into a model built from the same config. Values stored at a
/// different precision are converted.
template <typename Scalar>
void load_checkpoint(Model<Scalar>& model, const std::string& path);

/// Reads only the config echo of a checkpoint.
ModelConfig read_checkpoint_config(const std::string& path);

}  // namespace resformer
