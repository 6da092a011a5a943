#include "smart/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "smart/config_io.hpp"
#include "smart/errors.hpp"

namespace smart {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write("SMRT", 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw UsageError("parameter name too long: " + e.name);
    if (e.shape.size() > 0xff) throw UsageError("parameter rank too large: " + e.name);
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
    for (auto dim : e.shape) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
    for (float f : e.data) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SMRT", 4) != 0) {
    throw IoError("not a checkpoint (bad magic): " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  const auto count = get_le<std::uint32_t>(is, path);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = get_le<std::uint16_t>(is, path);
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
    const auto rank = get_le<std::uint8_t>(is, path);
    for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(get_le<std::uint32_t>(is, path));
    e.data.resize(shape_numel(e.shape));
    for (auto& f : e.data) f = std::bit_cast<float>(get_le<std::uint32_t>(is, path));
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_parameters(const std::filesystem::path& path, const ParameterSet& params) {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : params.all()) {
    CheckpointEntry e{p.name, p.value.shape(), {}};
    e.data.reserve(p.value.numel());
    for (double v : p.value.data()) e.data.push_back(static_cast<float>(v));
    entries.push_back(std::move(e));
  }
  write_checkpoint(path, entries);
}

void load_parameters(const std::filesystem::path& path, ParameterSet& params) {
  const auto entries = read_checkpoint(path);
  if (entries.size() != params.size()) {
    throw ShapeError("checkpoint " + path.string() + " holds " + std::to_string(entries.size()) +
                     " parameters, model expects " + std::to_string(params.size()));
  }
  for (const auto& e : entries) {
    if (!params.contains(e.name)) {
      throw ShapeError("checkpoint parameter '" + e.name + "' is unknown to the model");
    }
    Tensor t = params.get(e.name);
    if (t.shape() != e.shape) {
      throw ShapeError("parameter '" + e.name + "': checkpoint dims " + shape_to_string(e.shape) +
                       " vs model dims " + shape_to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < e.data.size(); ++i) dst[i] = e.data[i];
  }
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  save_parameters(path, model.params());
  write_json_file(config_path_for(path), to_json(model.config()));
}

Model load_model(const std::filesystem::path& path) {
  const auto config = model_config_from_json(read_json_file(config_path_for(path)));
  Model model(config, 0);
  load_parameters(path, model.params());
  return model;
}

}  // namespace smart
