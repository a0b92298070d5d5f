#include "npas/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace npas {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a,
                             const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " +
                              shape_to_string(a) + " and " +
                              shape_to_string(b));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("Tensor: shape " + shape_to_string(shape) +
                                " does not match " +
                                std::to_string(values.size()) + " values");
  for (const std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("Tensor: zero extent in shape");
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1)
    throw std::logic_error("scalar_value on tensor of size " +
                           std::to_string(size()));
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

std::vector<double>& Tensor::leaf_values() {
  if (node_->backprop)
    throw std::logic_error("leaf_values called on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::detached() const {
  return Tensor::constant(node_->shape, node_->value);
}

Tensor make_op_result(Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backprop) {
  auto n = new_node(std::move(shape), std::move(value));
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.node()->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          auto& pb = *n.parents[1];
                          pa.ensure_grad();
                          pb.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i) {
                            pa.grad[i] += n.grad[i];
                            pb.grad[i] += n.grad[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          auto& pb = *n.parents[1];
                          pa.ensure_grad();
                          pb.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i) {
                            pa.grad[i] += n.grad[i] * pb.value[i];
                            pb.grad[i] += n.grad[i] * pa.value[i];
                          }
                        });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return make_op_result(a.shape(), std::move(out), {a},
                        [c](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                            pa.grad[i] += n.grad[i] * c;
                        });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
    }
  return make_op_result(
      {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        // dA = G * B^T, dB = A^T * G
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = nd.grad[i * n + j];
            if (g == 0.0) continue;
            for (std::size_t l = 0; l < k; ++l) {
              pa.grad[i * k + l] += g * pb.value[l * n + j];
              pb.grad[l * n + j] += g * pa.value[i * k + l];
            }
          }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: expected 2-D tensor, got " +
                                shape_to_string(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i * c + j);
  return make_op_result({c, r}, std::move(out), {a},
                        [r, c](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              pa.grad[i * c + j] += n.grad[j * r + i];
                        });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is.size() != 4 || ks.size() != 4 || is[1] != ks[1])
    shape_fail("conv2d", is, ks);
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
  const std::size_t F = ks[0], kh = ks[2], kw = ks[3];
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw std::invalid_argument("conv2d: kernel " + shape_to_string(ks) +
                                " larger than padded input " +
                                shape_to_string(is));
  const std::size_t hspan = H + 2 * padding - kh;
  const std::size_t wspan = W + 2 * padding - kw;
  if (hspan % stride != 0 || wspan % stride != 0)
    throw std::invalid_argument(
        "conv2d: non-integral output extent for input " + shape_to_string(is) +
        ", kernel " + shape_to_string(ks) + ", stride " +
        std::to_string(stride) + ", padding " + std::to_string(padding));
  const std::size_t Ho = hspan / stride + 1;
  const std::size_t Wo = wspan / stride + 1;

  const auto& x = input.values();
  const auto& k = kernel.values();
  std::vector<double> out(N * F * Ho * Wo, 0.0);
  const auto in_at = [&](std::size_t n, std::size_t c, std::ptrdiff_t h,
                         std::ptrdiff_t w) -> double {
    if (h < 0 || w < 0 || h >= static_cast<std::ptrdiff_t>(H) ||
        w >= static_cast<std::ptrdiff_t>(W))
      return 0.0;
    return x[((n * C + c) * H + h) * W + w];
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * stride + r) -
                    static_cast<std::ptrdiff_t>(padding);
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * stride + s) -
                    static_cast<std::ptrdiff_t>(padding);
                acc += in_at(n, c, ih, iw) * k[((f * C + c) * kh + r) * kw + s];
              }
          out[((n * F + f) * Ho + oh) * Wo + ow] = acc;
        }

  return make_op_result(
      {N, F, Ho, Wo}, std::move(out), {input, kernel},
      [N, C, H, W, F, kh, kw, Ho, Wo, stride, padding](detail::Node& nd) {
        auto& pin = *nd.parents[0];
        auto& pker = *nd.parents[1];
        pin.ensure_grad();
        pker.ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < Ho; ++oh)
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const double g = nd.grad[((n * F + f) * Ho + oh) * Wo + ow];
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c)
                  for (std::size_t r = 0; r < kh; ++r)
                    for (std::size_t s = 0; s < kw; ++s) {
                      const std::ptrdiff_t ih =
                          static_cast<std::ptrdiff_t>(oh * stride + r) -
                          static_cast<std::ptrdiff_t>(padding);
                      const std::ptrdiff_t iw =
                          static_cast<std::ptrdiff_t>(ow * stride + s) -
                          static_cast<std::ptrdiff_t>(padding);
                      if (ih < 0 || iw < 0 ||
                          ih >= static_cast<std::ptrdiff_t>(H) ||
                          iw >= static_cast<std::ptrdiff_t>(W))
                        continue;
                      const std::size_t xi = ((n * C + c) * H + ih) * W + iw;
                      const std::size_t ki = ((f * C + c) * kh + r) * kw + s;
                      pin.grad[xi] += g * pker.value[ki];
                      pker.grad[ki] += g * pin.value[xi];
                    }
              }
      });
}

// ---------------------------------------------------------------------------
// shape & selection

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_op_result(a.shape(), std::move(out), {a},
                        [](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                            if (pa.value[i] > 0.0) pa.grad[i] += n.grad[i];
                        });
}

Tensor bias_add(const Tensor& x, const Tensor& bias, std::size_t axis) {
  if (bias.shape().size() != 1 || axis >= x.shape().size() ||
      bias.shape()[0] != x.shape()[axis])
    shape_fail("bias_add", x.shape(), bias.shape());
  // Index along `axis` decomposes as (i / inner) % extent.
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.shape().size(); ++d)
    inner *= x.shape()[d];
  const std::size_t extent = x.shape()[axis];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.at(i) + bias.at((i / inner) % extent);
  return make_op_result(x.shape(), std::move(out), {x, bias},
                        [inner, extent](detail::Node& n) {
                          auto& px = *n.parents[0];
                          auto& pb = *n.parents[1];
                          px.ensure_grad();
                          pb.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i) {
                            px.grad[i] += n.grad[i];
                            pb.grad[(i / inner) % extent] += n.grad[i];
                          }
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    shape_fail("reshape", a.shape(), shape);
  std::vector<double> out = a.values();
  return make_op_result(std::move(shape), std::move(out), {a},
                        [](detail::Node& n) {
                          auto& pa = *n.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                            pa.grad[i] += n.grad[i];
                        });
}

Tensor slice_modular(const Tensor& flat, std::size_t start,
                     std::size_t length) {
  if (flat.shape().size() != 1)
    throw std::invalid_argument("slice_modular: expected 1-D tensor, got " +
                                shape_to_string(flat.shape()));
  if (length == 0)
    throw std::invalid_argument("slice_modular: zero length");
  const std::size_t n = flat.size();
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = flat.at((start + i) % n);
  return make_op_result({length}, std::move(out), {flat},
                        [start, n](detail::Node& nd) {
                          auto& pa = *nd.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            pa.grad[(start + i) % n] += nd.grad[i];
                        });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty list");
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.shape().size() != 1)
      throw std::invalid_argument("concat: expected 1-D tensors, got " +
                                  shape_to_string(t.shape()));
    total += t.size();
  }
  std::vector<double> out;
  out.reserve(total);
  std::vector<std::size_t> sizes;
  sizes.reserve(parts.size());
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.values().begin(), t.values().end());
    sizes.push_back(t.size());
  }
  return make_op_result({total}, std::move(out), parts,
                        [sizes](detail::Node& n) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < sizes.size(); ++p) {
                            auto& pp = *n.parents[p];
                            pp.ensure_grad();
                            for (std::size_t i = 0; i < sizes[p]; ++i)
                              pp.grad[i] += n.grad[off + i];
                            off += sizes[p];
                          }
                        });
}

Tensor weighted_sum(const std::vector<Tensor>& tensors, const Tensor& coeffs) {
  if (tensors.empty())
    throw std::invalid_argument("weighted_sum: empty tensor list");
  if (coeffs.shape().size() != 1 || coeffs.size() != tensors.size())
    throw std::invalid_argument(
        "weighted_sum: coefficient count " + std::to_string(coeffs.size()) +
        " does not match " + std::to_string(tensors.size()) + " tensors");
  const Shape& shape = tensors[0].shape();
  for (const Tensor& t : tensors)
    if (t.shape() != shape) shape_fail("weighted_sum", shape, t.shape());

  const std::size_t K = tensors.size();
  const std::size_t n = tensors[0].size();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double c = coeffs.at(k);
    const auto& tv = tensors[k].values();
    for (std::size_t i = 0; i < n; ++i) out[i] += c * tv[i];
  }
  std::vector<Tensor> inputs = tensors;
  inputs.push_back(coeffs);
  return make_op_result(
      shape, std::move(out), std::move(inputs), [K, n](detail::Node& nd) {
        auto& pc = *nd.parents[K];
        pc.ensure_grad();
        for (std::size_t k = 0; k < K; ++k) {
          auto& pt = *nd.parents[k];
          pt.ensure_grad();
          const double c = pc.value[k];
          double dc = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            pt.grad[i] += c * nd.grad[i];
            dc += nd.grad[i] * pt.value[i];
          }
          pc.grad[k] += dc;
        }
      });
}

Tensor linear_resize_1d(const Tensor& v, std::size_t m) {
  if (v.shape().size() != 1)
    throw std::invalid_argument("linear_resize_1d: expected 1-D tensor, got " +
                                shape_to_string(v.shape()));
  if (m == 0) throw std::invalid_argument("linear_resize_1d: zero length");
  const std::size_t n = v.size();
  if (m == n) {
    // exact copy; keeps the m == n case bit-identical
    std::vector<double> out = v.values();
    return make_op_result({m}, std::move(out), {v},
                          [](detail::Node& nd) {
                            auto& pa = *nd.parents[0];
                            pa.ensure_grad();
                            for (std::size_t i = 0; i < nd.grad.size(); ++i)
                              pa.grad[i] += nd.grad[i];
                          });
  }
  // lo/hi indices and fraction per output element (align corners)
  std::vector<std::size_t> lo(m), hi(m);
  std::vector<double> frac(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (n == 1 || m == 1) {
      lo[i] = hi[i] = 0;
      frac[i] = 0.0;
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(n - 1) /
                       static_cast<double>(m - 1);
    std::size_t l = static_cast<std::size_t>(pos);
    if (l >= n - 1) l = n - 2;
    lo[i] = l;
    hi[i] = l + 1;
    frac[i] = pos - static_cast<double>(l);
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i)
    out[i] = (1.0 - frac[i]) * v.at(lo[i]) + frac[i] * v.at(hi[i]);
  return make_op_result({m}, std::move(out), {v},
                        [lo, hi, frac](detail::Node& nd) {
                          auto& pa = *nd.parents[0];
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                            pa.grad[lo[i]] += (1.0 - frac[i]) * nd.grad[i];
                            pa.grad[hi[i]] += frac[i] * nd.grad[i];
                          }
                        });
}

Tensor softmax_1d(const Tensor& a) {
  if (a.shape().size() != 1)
    throw std::invalid_argument("softmax_1d: expected 1-D tensor, got " +
                                shape_to_string(a.shape()));
  const std::size_t n = a.size();
  double mx = a.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.at(i));
  std::vector<double> out(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(a.at(i) - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  return make_op_result({n}, std::move(out), {a},
                        [n](detail::Node& nd) {
                          auto& pa = *nd.parents[0];
                          pa.ensure_grad();
                          double dot = 0.0;
                          for (std::size_t i = 0; i < n; ++i)
                            dot += nd.grad[i] * nd.value[i];
                          for (std::size_t i = 0; i < n; ++i)
                            pa.grad[i] += nd.value[i] * (nd.grad[i] - dot);
                        });
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument(
        "softmax_cross_entropy: expected 2-D logits, got " +
        shape_to_string(logits.shape()));
  const std::size_t N = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != N)
    throw std::invalid_argument("softmax_cross_entropy: " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(N) + " rows");
  for (const std::size_t y : labels)
    if (y >= C)
      throw std::invalid_argument("softmax_cross_entropy: label " +
                                  std::to_string(y) + " out of range [0," +
                                  std::to_string(C) + ")");
  // Save row softmax for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(N * C);
  double loss = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    double mx = logits.at(r * C);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits.at(r * C + c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = std::exp(logits.at(r * C + c) - mx);
      (*probs)[r * C + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < C; ++c) (*probs)[r * C + c] /= z;
    loss += std::log(z) + mx - logits.at(r * C + labels[r]);
  }
  loss /= static_cast<double>(N);
  return make_op_result(
      {1}, {loss}, {logits},
      [N, C, labels, probs](detail::Node& nd) {
        auto& pl = *nd.parents[0];
        pl.ensure_grad();
        const double g = nd.grad[0] / static_cast<double>(N);
        for (std::size_t r = 0; r < N; ++r)
          for (std::size_t c = 0; c < C; ++c) {
            double d = (*probs)[r * C + c];
            if (c == labels[r]) d -= 1.0;
            pl.grad[r * C + c] += g * d;
          }
      });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a.at(i);
  return make_op_result({1}, {s / static_cast<double>(n)}, {a},
                        [n](detail::Node& nd) {
                          auto& pa = *nd.parents[0];
                          pa.ensure_grad();
                          const double g =
                              nd.grad[0] / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i) pa.grad[i] += g;
                        });
}

// ---------------------------------------------------------------------------
// reverse pass

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                shape_to_string(loss.shape()));
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Collect the reachable differentiable subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    detail::Node* cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    for (const auto& p : cur->parents)
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  // Nodes were created in topological order; replay newest-first.
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) {
              return a->seq > b->seq;
            });
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (detail::Node* n : order)
    if (n->backprop) n->backprop(*n);
}

}  // namespace npas
