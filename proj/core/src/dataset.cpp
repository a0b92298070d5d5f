#include "npas/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "npas/rng.hpp"

namespace npas {

Tensor Dataset::batch_features(const std::vector<std::size_t>& indices) const {
  const std::size_t w = sample_width();
  std::vector<double> out;
  out.reserve(indices.size() * w);
  for (const std::size_t i : indices) {
    if (i >= size())
      throw std::out_of_range("dataset: index " + std::to_string(i));
    out.insert(out.end(), features.begin() + i * w,
               features.begin() + (i + 1) * w);
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), feature_shape.begin(), feature_shape.end());
  return Tensor::constant(std::move(shape), std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(
    const std::vector<std::size_t>& indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (const std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

namespace {

[[noreturn]] void data_fail(const std::string& msg) {
  throw std::runtime_error("dataset: " + msg);
}

Dataset make_blobs(std::size_t count, const DataConfig& cfg, Rng& rng) {
  Dataset ds;
  ds.feature_shape = {cfg.features};
  ds.num_classes = cfg.classes;
  ds.features.reserve(count * cfg.features);
  ds.labels.reserve(count);
  // Fixed sub-center layout per class, then samples.
  const std::size_t centers = std::max<std::size_t>(1, cfg.centers_per_class);
  std::vector<double> mu(cfg.classes * centers * cfg.features);
  for (double& x : mu) x = rng.normal() * cfg.separation;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % cfg.classes;  // balanced classes
    const std::size_t sub = rng.uniform_int(0, centers - 1);
    const double* center = &mu[(cls * centers + sub) * cfg.features];
    for (std::size_t d = 0; d < cfg.features; ++d)
      ds.features.push_back(center[d] + rng.normal() * cfg.noise);
    ds.labels.push_back(cls);
  }
  return ds;
}

Dataset make_two_spirals(std::size_t count, const DataConfig& cfg, Rng& rng) {
  Dataset ds;
  ds.feature_shape = {2};
  ds.num_classes = 2;
  ds.features.reserve(count * 2);
  ds.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % 2;
    const double t =
        3.0 * 3.14159265358979323846 * (static_cast<double>(i / 2) + 1.0) /
        (static_cast<double>(count / 2) + 1.0);
    const double sgn = cls == 0 ? 1.0 : -1.0;
    ds.features.push_back(sgn * t * std::cos(t) / 10.0 +
                          rng.normal() * cfg.noise * 0.05);
    ds.features.push_back(sgn * t * std::sin(t) / 10.0 +
                          rng.normal() * cfg.noise * 0.05);
    ds.labels.push_back(cls);
  }
  return ds;
}

Dataset parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) data_fail("cannot open '" + path + "'");
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (lineno == 1) {
      // optional header: skip when the first field is not numeric
      char* end = nullptr;
      std::strtod(fields[0].c_str(), &end);
      columns = fields.size();
      if (end == fields[0].c_str()) continue;
    }
    if (fields.size() != columns)
      data_fail("'" + path + "' line " + std::to_string(lineno) + ": " +
                std::to_string(fields.size()) + " fields, header declares " +
                std::to_string(columns));
    char* end = nullptr;
    const double labelv = std::strtod(fields[0].c_str(), &end);
    if (end == fields[0].c_str() || labelv < 0.0 ||
        labelv != std::floor(labelv))
      data_fail("'" + path + "' line " + std::to_string(lineno) +
                ": bad label '" + fields[0] + "'");
    ds.labels.push_back(static_cast<std::size_t>(labelv));
    for (std::size_t f = 1; f < fields.size(); ++f) {
      const double v = std::strtod(fields[f].c_str(), &end);
      if (end == fields[f].c_str())
        data_fail("'" + path + "' line " + std::to_string(lineno) +
                  ": bad value '" + fields[f] + "'");
      ds.features.push_back(v);
    }
  }
  if (ds.labels.empty()) data_fail("'" + path + "' contains no samples");
  ds.feature_shape = {columns - 1};
  std::size_t max_label = 0;
  for (const std::size_t l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = max_label + 1;
  return ds;
}

std::uint32_t read_u32_be(std::istream& in, const std::string& path,
                          std::size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    data_fail("'" + path + "': truncated at byte offset " +
              std::to_string(offset));
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

// IDX ubyte container: 0x0000 | dtype 0x08 | ndim, then ndim u32
// big-endian extents, then the payload.
std::pair<Shape, std::vector<std::uint8_t>> parse_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_fail("cannot open '" + path + "'");
  std::size_t offset = 0;
  const std::uint32_t magic = read_u32_be(in, path, offset);
  if ((magic & 0xFFFFFF00u) != 0x00000800u)
    data_fail("'" + path + "': bad IDX magic 0x" +
              [magic] {
                char buf[16];
                std::snprintf(buf, sizeof buf, "%08x", magic);
                return std::string(buf);
              }() +
              " at byte offset 0");
  const std::size_t ndim = magic & 0xFFu;
  Shape shape;
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    const std::uint32_t e = read_u32_be(in, path, offset);
    shape.push_back(e);
    total *= e;
  }
  std::vector<std::uint8_t> data(total);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total));
  if (!in)
    data_fail("'" + path + "': truncated payload at byte offset " +
              std::to_string(offset + static_cast<std::size_t>(in.gcount())));
  return {shape, std::move(data)};
}

Dataset parse_idx_pair(const std::string& images_path,
                       const std::string& labels_path) {
  auto [ishape, ibytes] = parse_idx(images_path);
  auto [lshape, lbytes] = parse_idx(labels_path);
  if (ishape.size() < 2)
    data_fail("'" + images_path + "': image file must be at least 2-D");
  if (lshape.size() != 1)
    data_fail("'" + labels_path + "': label file must be 1-D");
  if (ishape[0] != lshape[0])
    data_fail("IDX pair: " + std::to_string(ishape[0]) + " images vs " +
              std::to_string(lshape[0]) + " labels");
  Dataset ds;
  ds.feature_shape.assign(ishape.begin() + 1, ishape.end());
  ds.features.reserve(ibytes.size());
  for (const std::uint8_t b : ibytes)
    ds.features.push_back(static_cast<double>(b) / 255.0);
  ds.labels.reserve(lbytes.size());
  std::size_t max_label = 0;
  for (const std::uint8_t b : lbytes) {
    ds.labels.push_back(b);
    max_label = std::max<std::size_t>(max_label, b);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

DataSplit split_at(Dataset&& all, std::size_t train_n) {
  if (train_n == 0 || train_n >= all.size())
    data_fail("split leaves an empty train or eval set");
  const std::size_t w = all.sample_width();
  DataSplit split;
  split.train.feature_shape = split.eval.feature_shape = all.feature_shape;
  split.train.num_classes = split.eval.num_classes = all.num_classes;
  split.train.features.assign(all.features.begin(),
                              all.features.begin() + train_n * w);
  split.train.labels.assign(all.labels.begin(), all.labels.begin() + train_n);
  split.eval.features.assign(all.features.begin() + train_n * w,
                             all.features.end());
  split.eval.labels.assign(all.labels.begin() + train_n, all.labels.end());
  return split;
}

DataSplit split_tail(Dataset&& all, double eval_fraction) {
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
    data_fail("eval_fraction must be in (0,1)");
  const std::size_t n = all.size();
  const std::size_t eval_n =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                   eval_fraction * static_cast<double>(n))));
  return split_at(std::move(all), n - eval_n);
}

}  // namespace

DataSplit load_dataset(const DataConfig& cfg, std::uint64_t fallback_seed) {
  const std::uint64_t seed =
      cfg.seed ? *cfg.seed : derive_seed(fallback_seed, "data");
  if (cfg.dataset == "blobs" || cfg.dataset == "two_spirals") {
    Rng rng(seed);
    // one stream: train samples first, then eval
    Dataset all = cfg.dataset == "blobs"
                      ? make_blobs(cfg.train_size + cfg.eval_size, cfg, rng)
                      : make_two_spirals(cfg.train_size + cfg.eval_size, cfg,
                                         rng);
    return split_at(std::move(all), cfg.train_size);
  }
  if (cfg.dataset.rfind("csv:", 0) == 0)
    return split_tail(parse_csv(cfg.dataset.substr(4)), cfg.eval_fraction);
  if (cfg.dataset.rfind("idx:", 0) == 0) {
    const std::string rest = cfg.dataset.substr(4);
    const std::size_t comma = rest.find(',');
    if (comma == std::string::npos)
      data_fail("idx spec needs 'idx:<images>,<labels>'");
    return split_tail(
        parse_idx_pair(rest.substr(0, comma), rest.substr(comma + 1)),
        cfg.eval_fraction);
  }
  data_fail("unknown dataset '" + cfg.dataset + "'");
}

void conform_to_network(DataSplit& split, const NetworkSpec& net) {
  const std::size_t want = shape_numel(net.input_shape);
  for (Dataset* ds : {&split.train, &split.eval}) {
    if (ds->sample_width() != want)
      throw std::runtime_error(
          "dataset: sample width " + std::to_string(ds->sample_width()) +
          " does not match network input " + shape_to_string(net.input_shape));
    ds->feature_shape = net.input_shape;
  }
}

}  // namespace npas
