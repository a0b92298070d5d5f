#include "npas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace npas {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'P', 'A', 'S', 'C', 'K', 'P', '1'};
constexpr char kWeightsMagic[8] = {'N', 'P', 'A', 'S', 'W', 'T', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("'" + path + "': truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
  const auto len = read_pod<std::uint32_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw std::runtime_error("'" + path + "': truncated string");
  return s;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t count,
                                 const std::string& path) {
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("'" + path + "': truncated array");
  return v;
}

}  // namespace

const std::vector<double>& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, v] : arrays)
    if (n == name) return v;
  throw std::runtime_error("checkpoint: no array named '" + name + "'");
}

Checkpoint checkpoint_from_model(const Model& model,
                                 const std::string& mapping_text) {
  Checkpoint ckpt;
  ckpt.census = model.census();
  ckpt.mapping_text = mapping_text;
  for (const TrainableParam& p : model.trainables())
    ckpt.arrays.emplace_back(p.name, p.tensor.values());
  return ckpt;
}

void restore_model(const Model& model, const Checkpoint& ckpt) {
  std::vector<TrainableParam> params = model.trainables();
  if (params.size() != ckpt.arrays.size())
    throw std::runtime_error(
        "restore: model has " + std::to_string(params.size()) +
        " trainables, checkpoint has " + std::to_string(ckpt.arrays.size()));
  for (TrainableParam& p : params) {
    const std::vector<double>& src = ckpt.array(p.name);
    auto& dst = p.tensor.leaf_values();
    if (src.size() != dst.size())
      throw std::runtime_error("restore: array '" + p.name + "' has " +
                               std::to_string(src.size()) + " values, tensor " +
                               std::to_string(dst.size()));
    dst = src;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(ckpt.census));
  write_string(out, ckpt.mapping_text);
  write_pod(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, values] : ckpt.arrays) {
    write_string(out, name);
    write_pod(out, static_cast<std::uint64_t>(values.size()));
    write_doubles(out, values);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path + "': not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw std::runtime_error("'" + path + "': unsupported version " +
                             std::to_string(version));
  Checkpoint ckpt;
  ckpt.census = read_pod<std::uint64_t>(in, path);
  ckpt.mapping_text = read_string(in, path);
  const auto count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(in, path);
    const auto len = read_pod<std::uint64_t>(in, path);
    ckpt.arrays.emplace_back(std::move(name), read_doubles(in, len, path));
  }
  return ckpt;
}

void save_weight_dump(const std::vector<DumpEntry>& entries,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("weights: cannot write '" + path + "'");
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(entries.size()));
  for (const DumpEntry& e : entries) {
    write_string(out, e.name);
    write_pod(out, static_cast<std::uint32_t>(e.shape.size()));
    for (const std::size_t d : e.shape)
      write_pod(out, static_cast<std::uint64_t>(d));
    write_doubles(out, e.values);
  }
  if (!out) throw std::runtime_error("weights: write failed for '" + path + "'");
}

std::vector<DumpEntry> load_weight_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("weights: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path + "': not a weight dump");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw std::runtime_error("'" + path + "': unsupported version " +
                             std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in, path);
  std::vector<DumpEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DumpEntry e;
    e.name = read_string(in, path);
    const auto ndim = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t d = 0; d < ndim; ++d)
      e.shape.push_back(read_pod<std::uint64_t>(in, path));
    e.values = read_doubles(in, shape_numel(e.shape), path);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::size_t weight_dump_file_size(const std::vector<DumpEntry>& entries) {
  std::size_t size = sizeof kWeightsMagic + sizeof kVersion + sizeof(std::uint32_t);
  for (const DumpEntry& e : entries) {
    size += sizeof(std::uint32_t) + e.name.size();  // name
    size += sizeof(std::uint32_t) + e.shape.size() * sizeof(std::uint64_t);
    size += e.values.size() * sizeof(double);
  }
  return size;
}

}  // namespace npas
