#include "npas/archspec.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace npas {

using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& msg) {
  throw std::runtime_error("config: " + msg);
}

Activation parse_activation(const std::string& s, const std::string& layer) {
  if (s == "relu") return Activation::Relu;
  if (s == "none") return Activation::None;
  if (s == "softmax") return Activation::Softmax;
  config_fail("layer '" + layer + "': unknown activation '" + s + "'");
}

CombinerKind parse_combiner(const std::string& s) {
  if (s == "wavg") return CombinerKind::Wavg;
  if (s == "emb") return CombinerKind::Emb;
  if (s == "rr") return CombinerKind::Rr;
  if (s == "avg") return CombinerKind::Avg;
  config_fail("unknown combiner '" + s + "'");
}

UpsamplerKind parse_upsampler(const std::string& s) {
  if (s == "repeat") return UpsamplerKind::Repeat;
  if (s == "inter") return UpsamplerKind::Inter;
  if (s == "mask") return UpsamplerKind::Mask;
  config_fail("unknown upsampler '" + s + "'");
}

// Shape of the activations flowing out of the previous layer; dense
// layers flatten whatever comes in.
struct FlowShape {
  Shape dims;
  std::size_t flat() const { return shape_numel(dims); }
};

json parse_json(const std::string& text) {
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) config_fail("document is not valid JSON");
  return doc;
}

NetworkSpec network_from_json(const json& nw) {
  if (!nw.is_object()) config_fail("'network' section must be an object");
  NetworkSpec net;
  if (!nw.contains("input_shape") || !nw["input_shape"].is_array())
    config_fail("network.input_shape missing");
  for (const auto& d : nw["input_shape"]) {
    const auto v = d.get<std::int64_t>();
    if (v < 1) config_fail("network.input_shape extents must be >= 1");
    net.input_shape.push_back(static_cast<std::size_t>(v));
  }
  net.num_classes = nw.value("num_classes", 0);
  if (net.num_classes < 1) config_fail("network.num_classes must be >= 1");
  if (!nw.contains("layers") || !nw["layers"].is_array() ||
      nw["layers"].empty())
    config_fail("network.layers must be a non-empty array");

  std::set<std::string> ids;
  FlowShape flow{net.input_shape};
  for (const auto& lj : nw["layers"]) {
    LayerSpec layer;
    layer.id = lj.value("id", "");
    if (layer.id.empty()) config_fail("layer without an id");
    if (!ids.insert(layer.id).second)
      config_fail("duplicate layer id '" + layer.id + "'");
    const std::string kind = lj.value("kind", "");
    layer.has_bias = lj.value("bias", true);
    layer.activation =
        parse_activation(lj.value("activation", "none"), layer.id);

    if (kind == "dense") {
      layer.kind = LayerKind::Dense;
      const std::int64_t out = lj.value("out", std::int64_t{0});
      if (out < 1)
        config_fail("layer '" + layer.id + "': dense needs out >= 1");
      const std::size_t in = flow.flat();
      layer.weight_shape = {static_cast<std::size_t>(out), in};
      flow.dims = {static_cast<std::size_t>(out)};
    } else if (kind == "conv2d") {
      layer.kind = LayerKind::Conv2d;
      if (flow.dims.size() != 3)
        config_fail("layer '" + layer.id +
                    "': conv2d needs a [C,H,W] input, previous shape is " +
                    shape_to_string(flow.dims));
      const std::int64_t filters = lj.value("filters", std::int64_t{0});
      if (filters < 1)
        config_fail("layer '" + layer.id + "': conv2d needs filters >= 1");
      std::size_t kh = 3, kw = 3;
      if (lj.contains("kernel")) {
        const auto& kj = lj["kernel"];
        if (!kj.is_array() || kj.size() != 2)
          config_fail("layer '" + layer.id + "': kernel must be [kh, kw]");
        kh = kj[0].get<std::size_t>();
        kw = kj[1].get<std::size_t>();
      }
      layer.stride = lj.value("stride", std::size_t{1});
      layer.padding = lj.value("padding", std::size_t{0});
      if (layer.stride < 1)
        config_fail("layer '" + layer.id + "': stride must be >= 1");
      const std::size_t C = flow.dims[0], H = flow.dims[1], W = flow.dims[2];
      if (kh > H + 2 * layer.padding || kw > W + 2 * layer.padding)
        config_fail("layer '" + layer.id + "': kernel exceeds padded input");
      const std::size_t hs = H + 2 * layer.padding - kh;
      const std::size_t ws = W + 2 * layer.padding - kw;
      if (hs % layer.stride != 0 || ws % layer.stride != 0)
        config_fail("layer '" + layer.id + "': non-integral output extent");
      layer.weight_shape = {static_cast<std::size_t>(filters), C, kh, kw};
      flow.dims = {static_cast<std::size_t>(filters), hs / layer.stride + 1,
                   ws / layer.stride + 1};
    } else {
      config_fail("layer '" + layer.id + "': unknown kind '" + kind + "'");
    }
    net.layers.push_back(std::move(layer));
  }
  if (flow.flat() != net.num_classes)
    config_fail("last layer produces " + std::to_string(flow.flat()) +
                " outputs but num_classes is " +
                std::to_string(net.num_classes));
  return net;
}

json network_to_json(const NetworkSpec& net) {
  json nw;
  nw["input_shape"] = net.input_shape;
  nw["num_classes"] = net.num_classes;
  nw["layers"] = json::array();
  for (const LayerSpec& l : net.layers) {
    json lj;
    lj["id"] = l.id;
    lj["kind"] = to_string(l.kind);
    if (l.kind == LayerKind::Dense) {
      lj["out"] = l.weight_shape[0];
    } else {
      lj["filters"] = l.weight_shape[0];
      lj["kernel"] = {l.weight_shape[2], l.weight_shape[3]};
      lj["stride"] = l.stride;
      lj["padding"] = l.padding;
    }
    lj["bias"] = l.has_bias;
    lj["activation"] = l.activation == Activation::Relu     ? "relu"
                       : l.activation == Activation::Softmax ? "softmax"
                                                             : "none";
    nw["layers"].push_back(std::move(lj));
  }
  return nw;
}

}  // namespace

std::size_t LayerSpec::fan_in() const {
  if (kind == LayerKind::Dense) return weight_shape[1];
  return weight_shape[1] * weight_shape[2] * weight_shape[3];
}

std::size_t NetworkSpec::total_weight_count() const {
  std::size_t n = 0;
  for (const LayerSpec& l : layers) n += l.weight_count();
  return n;
}

std::size_t NetworkSpec::total_bias_count() const {
  std::size_t n = 0;
  for (const LayerSpec& l : layers) n += l.bias_count();
  return n;
}

const LayerSpec& NetworkSpec::layer(const std::string& id) const {
  for (const LayerSpec& l : layers)
    if (l.id == id) return l;
  throw std::runtime_error("network: no layer named '" + id + "'");
}

bool NetworkSpec::has_layer(const std::string& id) const {
  for (const LayerSpec& l : layers)
    if (l.id == id) return true;
  return false;
}

NetworkSpec parse_network_config(const std::string& text) {
  json doc = parse_json(text);
  if (doc.contains("network")) return network_from_json(doc["network"]);
  return network_from_json(doc);
}

std::string serialize_network_config(const NetworkSpec& net) {
  return network_to_json(net).dump(2);
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json doc = parse_json(text);
  ExperimentConfig cfg;
  if (!doc.contains("network")) config_fail("missing 'network' section");
  cfg.network = network_from_json(doc["network"]);

  if (doc.contains("budget")) {
    const json& b = doc["budget"];
    if (b.contains("total_params") && b.contains("fraction"))
      config_fail("budget: give total_params or fraction, not both");
    if (b.contains("fraction")) {
      const double f = b["fraction"].get<double>();
      if (f <= 0.0) config_fail("budget.fraction must be > 0");
      cfg.budget.total_params = static_cast<std::size_t>(
          std::floor(f * static_cast<double>(cfg.network.total_weight_count())));
    } else if (b.contains("total_params")) {
      cfg.budget.total_params = b["total_params"].get<std::size_t>();
    } else {
      cfg.budget.total_params = cfg.network.total_weight_count();
    }
    cfg.budget.num_groups = b.value("groups", std::size_t{1});
    cfg.budget.max_templates = b.value("templates", std::size_t{8});
    cfg.budget.combiner = parse_combiner(b.value("combiner", "wavg"));
    cfg.budget.upsampler = parse_upsampler(b.value("upsampler", "mask"));
    cfg.budget.mask_window = b.value("mask_window", std::size_t{9});
    cfg.budget.emb_dim = b.value("emb_dim", std::size_t{24});
    cfg.budget.emb_softmax = b.value("emb_softmax", false);
  } else {
    cfg.budget.total_params = cfg.network.total_weight_count();
  }
  if (cfg.budget.total_params < 1) config_fail("budget resolves to 0 params");
  if (cfg.budget.num_groups < 1) config_fail("budget.groups must be >= 1");
  if (cfg.budget.max_templates < 1)
    config_fail("budget.templates must be >= 1");
  if (cfg.budget.mask_window < 1)
    config_fail("budget.mask_window must be >= 1");
  if (cfg.budget.emb_dim < 1) config_fail("budget.emb_dim must be >= 1");

  if (doc.contains("train")) {
    const json& t = doc["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.momentum = t.value("momentum", cfg.train.momentum);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.decay_combiner_params =
        t.value("decay_combiner_params", cfg.train.decay_combiner_params);
  }
  if (cfg.train.batch_size < 1) config_fail("train.batch_size must be >= 1");

  if (doc.contains("data")) {
    const json& d = doc["data"];
    cfg.data.dataset = d.value("dataset", cfg.data.dataset);
    cfg.data.train_size = d.value("train_size", cfg.data.train_size);
    cfg.data.eval_size = d.value("eval_size", cfg.data.eval_size);
    cfg.data.features = d.value("features", cfg.data.features);
    cfg.data.classes = d.value("classes", cfg.data.classes);
    cfg.data.centers_per_class =
        d.value("centers_per_class", cfg.data.centers_per_class);
    cfg.data.noise = d.value("noise", cfg.data.noise);
    cfg.data.separation = d.value("separation", cfg.data.separation);
    cfg.data.eval_fraction = d.value("eval_fraction", cfg.data.eval_fraction);
    if (d.contains("seed")) cfg.data.seed = d["seed"].get<std::uint64_t>();
  }

  if (doc.contains("mapping")) {
    const json& m = doc["mapping"];
    const std::string mode = m.value("mode", "auto");
    if (mode == "auto")
      cfg.mapping.mode = MappingMode::Auto;
    else if (mode == "single")
      cfg.mapping.mode = MappingMode::Single;
    else if (mode == "random")
      cfg.mapping.mode = MappingMode::Random;
    else if (mode == "manual")
      cfg.mapping.mode = MappingMode::Manual;
    else
      config_fail("mapping.mode must be auto|single|random|manual");
    cfg.mapping.file = m.value("file", "");
    if (cfg.mapping.mode == MappingMode::Manual && cfg.mapping.file.empty())
      config_fail("mapping.mode manual requires mapping.file");
    cfg.mapping.prelim_templates =
        m.value("prelim_templates", cfg.mapping.prelim_templates);
    if (cfg.mapping.prelim_templates < 2)
      config_fail("mapping.prelim_templates must be >= 2");
    cfg.mapping.prelim_epochs_fraction =
        m.value("prelim_epochs_fraction", cfg.mapping.prelim_epochs_fraction);
    if (cfg.mapping.prelim_epochs_fraction <= 0.0 ||
        cfg.mapping.prelim_epochs_fraction > 1.0)
      config_fail("mapping.prelim_epochs_fraction must be in (0, 1]");
    const std::string pc = m.value("prelim_combiner", "wavg");
    cfg.mapping.prelim_combiner = parse_combiner(pc);
    if (cfg.mapping.prelim_combiner != CombinerKind::Wavg &&
        cfg.mapping.prelim_combiner != CombinerKind::Emb)
      config_fail("mapping.prelim_combiner must be wavg or emb");
    cfg.mapping.normalize_reps =
        m.value("normalize_reps", cfg.mapping.normalize_reps);
  }

  cfg.out_dir = doc.value("out_dir", cfg.out_dir);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

Regime classify_regime(const NetworkSpec& net, const BudgetSpec& budget) {
  const std::size_t need = net.total_weight_count();
  if (budget.total_params < need) return Regime::LB;
  if (budget.total_params > need) return Regime::HB;
  return Regime::Exact;
}

std::size_t largest_layer_weights(const NetworkSpec& net) {
  if (net.layers.empty())
    throw std::runtime_error("network: no layers");
  std::size_t best = 0;
  for (const LayerSpec& l : net.layers)
    best = std::max(best, l.weight_count());
  return best;
}

std::vector<Shape> activation_shapes(const NetworkSpec& net) {
  std::vector<Shape> out;
  out.reserve(net.layers.size());
  Shape flow = net.input_shape;
  for (const LayerSpec& l : net.layers) {
    if (l.kind == LayerKind::Dense) {
      flow = {l.weight_shape[0]};
    } else {
      const std::size_t H = flow[1], W = flow[2];
      const std::size_t kh = l.weight_shape[2], kw = l.weight_shape[3];
      flow = {l.weight_shape[0], (H + 2 * l.padding - kh) / l.stride + 1,
              (W + 2 * l.padding - kw) / l.stride + 1};
    }
    out.push_back(flow);
  }
  return out;
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::LB: return "LB";
    case Regime::HB: return "HB";
    case Regime::Exact: return "EXACT";
  }
  return "?";
}

const char* to_string(CombinerKind c) {
  switch (c) {
    case CombinerKind::Wavg: return "wavg";
    case CombinerKind::Emb: return "emb";
    case CombinerKind::Rr: return "rr";
    case CombinerKind::Avg: return "avg";
  }
  return "?";
}

const char* to_string(UpsamplerKind u) {
  switch (u) {
    case UpsamplerKind::Repeat: return "repeat";
    case UpsamplerKind::Inter: return "inter";
    case UpsamplerKind::Mask: return "mask";
  }
  return "?";
}

const char* to_string(LayerKind k) {
  return k == LayerKind::Dense ? "dense" : "conv2d";
}

const char* to_string(MappingMode m) {
  switch (m) {
    case MappingMode::Auto: return "auto";
    case MappingMode::Single: return "single";
    case MappingMode::Random: return "random";
    case MappingMode::Manual: return "manual";
  }
  return "?";
}

}  // namespace npas
