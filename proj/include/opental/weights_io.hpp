#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "opental/detector.hpp"

namespace opental::model {

inline constexpr char kWeightsMagic[8] = {'O', 'T', 'A', 'L', 'W', '0', '0', '1'};

using NamedTensor = std::pair<std::string, diff::Tensor>;

/// Magic, then per tensor: u32 name length, name bytes, u32 rank, u32 dims,
/// little-endian f64 payload; repeated until end of file.
void write_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
/// Throws InputError when the file is missing, FormatError when malformed.
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// Saves parameters plus `meta.*` scalars describing the architecture.
void save_detector(const Detector& det, const std::filesystem::path& path);
Detector load_detector(const std::filesystem::path& path);

}  // namespace opental::model
