#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smart/model.hpp"
#include "smart/parameters.hpp"

namespace smart {

/// On-disk layout (all integers little-endian):
///   "SMRT" | u32 version | u32 count |
///   count × ( u16 name_len | name (UTF-8) | u8 rank | rank × u32 dim | f32 data )
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

void save_parameters(const std::filesystem::path& path, const ParameterSet& params);
/// Names and shapes must match exactly; mismatches raise ShapeError naming both.
void load_parameters(const std::filesystem::path& path, ParameterSet& params);

/// Path of the JSON model config written next to a checkpoint.
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace smart
