#pragma once

#include <filesystem>

#include "sosuq/train.hpp"

namespace sosuq {

/// Binary checkpoint holding a complete TrainSnapshot: network parameters
/// (float64, bit-exact round-trip), posterior Cholesky blocks when present,
/// ADAM moments, seed, iteration count, and the resolved configuration text.
/// Layout: a fixed header ("SQCK", version, mode, flags, seed, iteration)
/// followed by named sections, each a length-prefixed name and payload. The
/// numeric payloads reuse the tensor container, so every section is
/// integrity-checked by its own CRC.
void save_checkpoint(const std::filesystem::path& path, const TrainSnapshot& snap);

TrainSnapshot load_checkpoint(const std::filesystem::path& path);

} // namespace sosuq
