// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "sorbet/model.hpp"

namespace sorbet {

/// Writes a quantized-stage model (m1..snn) to a directory: a manifest.json
/// with the config and all scalar parameters, plus one raw little-endian
/// sidecar file per tensor (signs as i8, mantissas and exponents as i64,
/// real-valued parameters as f64). The reference stage holds no serialized
/// form and is rejected. The directory is created if needed and existing
/// files are overwritten.
void save_checkpoint(const StageModel& model,
                     const std::filesystem::path& dir);

/// Loads a checkpoint written by save_checkpoint and validates it. The
/// returned model carries no reference-stage parameters.
StageModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace sorbet
