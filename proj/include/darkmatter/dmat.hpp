#pragma once

// Activation files.
//
// DMAT1:    8-byte magic "DMAT\x01\0\0\0", u64 n, u64 d, then n*d f32 row-major.
// .weights: u64 n, then per row u32 count followed by count x (u32 index, f32 value).
// raw:      bare n*d f32 row-major; n and d supplied by the caller.
//
// All integers and floats are little-endian.

#include <filesystem>
#include <vector>

#include "darkmatter/synthdata.hpp"

namespace dm {

void write_dmat(const std::filesystem::path& path, const Matrix& data);
ActivationBatch read_dmat(const std::filesystem::path& path);

void write_weights(const std::filesystem::path& path, const std::vector<SparseRow>& rows);
std::vector<SparseRow> read_weights(const std::filesystem::path& path);

ActivationBatch read_raw_f32(const std::filesystem::path& path, std::uint64_t n, std::uint64_t d);

enum class ActivationFormat { dmat, raw };
ActivationFormat parse_activation_format(const std::string& s);

/// Loads a batch; for raw files n and d are required. A sidecar
/// `<path>.weights` is attached as ground truth when present.
ActivationBatch import_activations(const std::filesystem::path& path, ActivationFormat format,
                                   std::uint64_t n = 0, std::uint64_t d = 0);

/// Writes data and, if present, the ground-truth sidecar.
void export_activations(const std::filesystem::path& path, const ActivationBatch& batch);

} // namespace dm
