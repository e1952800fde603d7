#include <algorithm>
#include <cmath>
#include <limits>

#include "qad/error.hpp"
#include "qad/nn/graph.hpp"

namespace qad::nn {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::shape, std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                               to_string(b.shape()) + " differ");
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    fail(ErrorKind::shape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                               to_string(a.shape()));
  }
}

void require_labels(std::span<const int> labels, std::size_t rows, std::size_t classes,
                    const char* op) {
  if (labels.size() != rows) fail(ErrorKind::shape, std::string(op) + ": label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      fail(ErrorKind::invalid_input, std::string(op) + ": label out of range");
    }
  }
}

// Writes log-softmax of one row into out.
void log_softmax_row(const double* logits, std::size_t k, double inv_t, double* out) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) top = std::max(top, logits[j] * inv_t);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) total += std::exp(logits[j] * inv_t - top);
  const double log_total = std::log(total) + top;
  for (std::size_t j = 0; j < k; ++j) out[j] = logits[j] * inv_t - log_total;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = av[i] + bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().emplace(std::move(out), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    for (auto in : {ia, ib}) {
      if (!g.tracks(in)) continue;
      auto& gi = g.grad(in);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = av[i] - bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().emplace(std::move(out), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    if (g.tracks(ia)) {
      auto& gi = g.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
    if (g.tracks(ib)) {
      auto& gi = g.grad(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] -= go[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape());
  const auto& av = a.value().values;
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = av[i] * factor;
  const auto ia = a.id();
  return a.graph().emplace(std::move(out), {a}, [ia, factor](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    auto& gi = g.grad(ia);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * factor;
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values) total += v;
  const auto ia = a.id();
  return a.graph().emplace(Tensor({1}, {total}), {a}, [ia](Graph& g, std::uint32_t self) {
    const double go = g.grad(self)[0];
    for (double& v : g.grad(ia)) v += go;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var squared_norm(Var a) {
  double total = 0.0;
  for (double v : a.value().values) total += v * v;
  const auto ia = a.id();
  return a.graph().emplace(Tensor({1}, {total}), {a}, [ia](Graph& g, std::uint32_t self) {
    const double go = g.grad(self)[0];
    const auto& av = g.value(ia).values;
    auto& gi = g.grad(ia);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += 2.0 * av[i] * go;
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kernel, stride, pad;
  std::size_t out_h, out_w;
};

// Index range of output positions o for which o * stride + k - pad lies in
// [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t extent, std::size_t out_extent,
                                                std::size_t k, std::size_t stride,
                                                std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out_extent && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out_extent && hi * stride + k - pad < extent) ++hi;
  return {lo, hi};
}

}  // namespace

Var conv2d(Var x, Var w, Var b, std::size_t stride) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || b.shape() != Shape{ws[0]} || stride == 0) {
    fail(ErrorKind::shape, "conv2d: weight " + to_string(ws) + " incompatible with input " +
                               to_string(xs));
  }
  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, ws[2] / 2, 0, 0};
  if (geo.height + 2 * geo.pad < geo.kernel || geo.width + 2 * geo.pad < geo.kernel) {
    fail(ErrorKind::shape, "conv2d: kernel larger than padded input");
  }
  geo.out_h = (geo.height + 2 * geo.pad - geo.kernel) / stride + 1;
  geo.out_w = (geo.width + 2 * geo.pad - geo.kernel) / stride + 1;

  Tensor out({geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  const double* xv = x.value().values.data();
  const double* wv = w.value().values.data();
  const double* bv = b.value().values.data();
  const std::size_t in_plane = geo.height * geo.width;
  const std::size_t out_plane = geo.out_h * geo.out_w;
  const std::size_t k = geo.kernel;

  for (std::size_t n = 0; n < geo.batch; ++n) {
    for (std::size_t o = 0; o < geo.out_ch; ++o) {
      double* dst = out.values.data() + (n * geo.out_ch + o) * out_plane;
      std::fill(dst, dst + out_plane, bv[o]);
      for (std::size_t c = 0; c < geo.in_ch; ++c) {
        const double* src = xv + (n * geo.in_ch + c) * in_plane;
        const double* wk = wv + ((o * geo.in_ch + c) * k) * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto [y0, y1] = valid_range(geo.height, geo.out_h, ky, stride, geo.pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto [x0, x1] = valid_range(geo.width, geo.out_w, kx, stride, geo.pad);
            const double weight = wk[ky * k + kx];
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const double* srow = src + (oy * stride + ky - geo.pad) * geo.width;
              double* drow = dst + oy * geo.out_w;
              for (std::size_t ox = x0; ox < x1; ++ox) drow[ox] += weight * srow[ox * stride + kx - geo.pad];
            }
          }
        }
      }
    }
  }

  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph().emplace(std::move(out), {x, w, b}, [geo, ix, iw, ib](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    const double* xv = g.value(ix).values.data();
    const double* wv = g.value(iw).values.data();
    const std::size_t in_plane = geo.height * geo.width;
    const std::size_t out_plane = geo.out_h * geo.out_w;
    const std::size_t k = geo.kernel;
    const bool want_x = g.tracks(ix);
    const bool want_w = g.tracks(iw);
    double* gx = want_x ? g.grad(ix).data() : nullptr;
    double* gw = want_w ? g.grad(iw).data() : nullptr;
    if (g.tracks(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t n = 0; n < geo.batch; ++n)
        for (std::size_t o = 0; o < geo.out_ch; ++o) {
          const double* gplane = go.data() + (n * geo.out_ch + o) * out_plane;
          double acc = 0.0;
          for (std::size_t p = 0; p < out_plane; ++p) acc += gplane[p];
          gb[o] += acc;
        }
    }
    if (!want_x && !want_w) return;
    for (std::size_t n = 0; n < geo.batch; ++n) {
      for (std::size_t o = 0; o < geo.out_ch; ++o) {
        const double* gplane = go.data() + (n * geo.out_ch + o) * out_plane;
        for (std::size_t c = 0; c < geo.in_ch; ++c) {
          const std::size_t in_off = (n * geo.in_ch + c) * in_plane;
          const std::size_t w_off = ((o * geo.in_ch + c) * k) * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto [y0, y1] = valid_range(geo.height, geo.out_h, ky, geo.stride, geo.pad);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto [x0, x1] = valid_range(geo.width, geo.out_w, kx, geo.stride, geo.pad);
              const double weight = wv[w_off + ky * k + kx];
              double wacc = 0.0;
              for (std::size_t oy = y0; oy < y1; ++oy) {
                const std::size_t row = in_off + (oy * geo.stride + ky - geo.pad) * geo.width;
                const double* grow = gplane + oy * geo.out_w;
                if (want_w) {
                  const double* srow = xv + row;
                  for (std::size_t ox = x0; ox < x1; ++ox) wacc += grow[ox] * srow[ox * geo.stride + kx - geo.pad];
                }
                if (want_x) {
                  double* gxrow = gx + row;
                  for (std::size_t ox = x0; ox < x1; ++ox) gxrow[ox * geo.stride + kx - geo.pad] += weight * grow[ox];
                }
              }
              if (want_w) gw[w_off + ky * k + kx] += wacc;
            }
          }
        }
      }
    }
  });
}

Var relu(Var x) {
  Tensor out(x.shape());
  const auto& xv = x.value().values;
  std::uint64_t mask_hash = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const bool on = xv[i] > 0.0;
    out.values[i] = on ? xv[i] : 0.0;
    mask_hash = (mask_hash * 0x9e3779b97f4a7c15ULL) ^ (on ? i + 1 : 0);
  }
  Graph& graph = x.graph();
  graph.mix_decision(mask_hash);
  const auto ix = x.id();
  return graph.emplace(std::move(out), {x}, [ix](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    const auto& xv = g.value(ix).values;
    auto& gi = g.grad(ix);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (xv[i] > 0.0) gi[i] += go[i];
  });
}

Var max_pool2d(Var x, std::size_t size) {
  require_rank(x, 4, "max_pool2d");
  const Shape& xs = x.shape();
  if (size == 0 || xs[2] % size != 0 || xs[3] % size != 0) {
    fail(ErrorKind::shape, "max_pool2d: window " + std::to_string(size) +
                               " does not tile input " + to_string(xs));
  }
  const std::size_t oh = xs[2] / size, ow = xs[3] / size;
  Tensor out({xs[0], xs[1], oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  const auto& xv = x.value().values;
  std::uint64_t choice_hash = 0;
  for (std::size_t plane = 0; plane < xs[0] * xs[1]; ++plane) {
    const std::size_t base = plane * xs[2] * xs[3];
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (oy * size) * xs[3] + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = base + (oy * size + dy) * xs[3] + ox * size + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out.values[o] = xv[best];
        argmax[o] = static_cast<std::uint32_t>(best);
        choice_hash = (choice_hash * 0x9e3779b97f4a7c15ULL) ^ best;
      }
    }
  }
  Graph& graph = x.graph();
  graph.mix_decision(choice_hash);
  const auto ix = x.id();
  return graph.emplace(std::move(out), {x}, [ix, argmax = std::move(argmax)](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    auto& gi = g.grad(ix);
    for (std::size_t o = 0; o < go.size(); ++o) gi[argmax[o]] += go[o];
  });
}

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.value().numel()) {
    fail(ErrorKind::shape, "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor out(std::move(shape), x.value().values);
  const auto ix = x.id();
  return x.graph().emplace(std::move(out), {x}, [ix](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    auto& gi = g.grad(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (w.shape()[1] != in || b.shape() != Shape{out_dim}) {
    fail(ErrorKind::shape, "linear: weight " + to_string(w.shape()) + " incompatible with input " +
                               to_string(x.shape()));
  }
  Tensor out({batch, out_dim});
  const double* xv = x.value().values.data();
  const double* wv = w.value().values.data();
  const double* bv = b.value().values.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xrow = xv + n * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = wv + o * in;
      double acc = bv[o];
      for (std::size_t f = 0; f < in; ++f) acc += wrow[f] * xrow[f];
      out.values[n * out_dim + o] = acc;
    }
  }
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph().emplace(std::move(out), {x, w, b},
                           [ix, iw, ib, batch, in, out_dim](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    const double* xv = g.value(ix).values.data();
    const double* wv = g.value(iw).values.data();
    if (g.tracks(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += go[n * out_dim + o];
    }
    if (g.tracks(iw)) {
      double* gw = g.grad(iw).data();
      for (std::size_t n = 0; n < batch; ++n) {
        const double* xrow = xv + n * in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double d = go[n * out_dim + o];
          if (d == 0.0) continue;
          double* gwrow = gw + o * in;
          for (std::size_t f = 0; f < in; ++f) gwrow[f] += d * xrow[f];
        }
      }
    }
    if (g.tracks(ix)) {
      double* gx = g.grad(ix).data();
      for (std::size_t n = 0; n < batch; ++n) {
        double* gxrow = gx + n * in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double d = go[n * out_dim + o];
          if (d == 0.0) continue;
          const double* wrow = wv + o * in;
          for (std::size_t f = 0; f < in; ++f) gxrow[f] += d * wrow[f];
        }
      }
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (xs.empty() || begin > end || end > xs[0]) fail(ErrorKind::shape, "slice_rows: bad range");
  const std::size_t row = x.value().numel() / xs[0];
  Shape shape = xs;
  shape[0] = end - begin;
  const auto& xv = x.value().values;
  Tensor out(shape, std::vector<double>(xv.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                        xv.begin() + static_cast<std::ptrdiff_t>(end * row)));
  const auto ix = x.id();
  const std::size_t offset = begin * row;
  return x.graph().emplace(std::move(out), {x}, [ix, offset](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    auto& gi = g.grad(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gi[offset + i] += go[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "concat_rows: nothing to concatenate");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    Shape tail = p.shape();
    if (tail.empty() || tail.size() != shape.size() ||
        !std::equal(tail.begin() + 1, tail.end(), shape.begin() + 1)) {
      fail(ErrorKind::shape, "concat_rows: trailing shapes differ");
    }
    rows += tail[0];
  }
  shape[0] = rows;
  Tensor out(shape);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto& pv = p.value().values;
    std::copy(pv.begin(), pv.end(), out.values.begin() + static_cast<std::ptrdiff_t>(offset));
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += pv.size();
  }
  return parts[0].graph().emplace(std::move(out), parts, [ids, offsets](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!g.tracks(ids[p])) continue;
      auto& gi = g.grad(ids[p]);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[offsets[p] + i];
    }
  });
}

Var spatial_mean(Var x) {
  require_rank(x, 4, "spatial_mean");
  const Shape& xs = x.shape();
  const std::size_t plane = xs[2] * xs[3];
  Tensor out({xs[0], xs[1]});
  const auto& xv = x.value().values;
  for (std::size_t p = 0; p < xs[0] * xs[1]; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
    out.values[p] = acc / static_cast<double>(plane);
  }
  const auto ix = x.id();
  return x.graph().emplace(std::move(out), {x}, [ix, plane](Graph& g, std::uint32_t self) {
    const auto& go = g.grad(self);
    auto& gi = g.grad(ix);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t p = 0; p < go.size(); ++p)
      for (std::size_t i = 0; i < plane; ++i) gi[p * plane + i] += go[p] * inv;
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  require_labels(labels, rows, k, "cross_entropy");
  std::vector<double> log_probs(rows * k);
  const double* lv = logits.value().values.data();
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    log_softmax_row(lv + n * k, k, 1.0, log_probs.data() + n * k);
    total -= log_probs[n * k + static_cast<std::size_t>(labels[n])];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<int> y(labels.begin(), labels.end());
  const auto il = logits.id();
  return logits.graph().emplace(Tensor({1}, {total * inv_rows}), {logits},
                                [il, k, inv_rows, y = std::move(y), log_probs = std::move(log_probs)](
                                    Graph& g, std::uint32_t self) {
    const double go = g.grad(self)[0] * inv_rows;
    auto& gi = g.grad(il);
    for (std::size_t n = 0; n < y.size(); ++n)
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(log_probs[n * k + j]);
        gi[n * k + j] += go * (p - (static_cast<int>(j) == y[n] ? 1.0 : 0.0));
      }
  });
}

Var soft_cross_entropy(Var logits, const Tensor& targets, double temperature) {
  require_rank(logits, 2, "soft_cross_entropy");
  if (targets.shape != logits.shape()) fail(ErrorKind::shape, "soft_cross_entropy: target shape");
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_config, "temperature must be positive");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  const double inv_t = 1.0 / temperature;
  std::vector<double> log_probs(rows * k);
  const double* lv = logits.value().values.data();
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    log_softmax_row(lv + n * k, k, inv_t, log_probs.data() + n * k);
    for (std::size_t j = 0; j < k; ++j) total -= targets.values[n * k + j] * log_probs[n * k + j];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  const auto il = logits.id();
  return logits.graph().emplace(
      Tensor({1}, {total * inv_rows}), {logits},
      [il, k, inv_rows, inv_t, t = targets.values, log_probs = std::move(log_probs)](Graph& g, std::uint32_t self) {
        const double go = g.grad(self)[0] * inv_rows * inv_t;
        auto& gi = g.grad(il);
        for (std::size_t n = 0; n * k < log_probs.size(); ++n) {
          double mass = 0.0;
          for (std::size_t j = 0; j < k; ++j) mass += t[n * k + j];
          for (std::size_t j = 0; j < k; ++j) {
            gi[n * k + j] += go * (mass * std::exp(log_probs[n * k + j]) - t[n * k + j]);
          }
        }
      });
}

Var kl_divergence(Var p_logits, Var q_logits) {
  require_same_shape(p_logits, q_logits, "kl_divergence");
  require_rank(p_logits, 2, "kl_divergence");
  const std::size_t rows = p_logits.shape()[0], k = p_logits.shape()[1];
  std::vector<double> lp(rows * k), lq(rows * k);
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    log_softmax_row(p_logits.value().values.data() + n * k, k, 1.0, lp.data() + n * k);
    log_softmax_row(q_logits.value().values.data() + n * k, k, 1.0, lq.data() + n * k);
    for (std::size_t j = 0; j < k; ++j) {
      total += std::exp(lp[n * k + j]) * (lp[n * k + j] - lq[n * k + j]);
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  const auto ip = p_logits.id(), iq = q_logits.id();
  return p_logits.graph().emplace(
      Tensor({1}, {total * inv_rows}), {p_logits, q_logits},
      [ip, iq, k, inv_rows, lp = std::move(lp), lq = std::move(lq)](Graph& g, std::uint32_t self) {
        const double go = g.grad(self)[0] * inv_rows;
        const std::size_t rows = lp.size() / k;
        if (g.tracks(ip)) {
          // d/dz_p sum p (log p - log q) = p * ((log p - log q) - KL_row)
          auto& gp = g.grad(ip);
          for (std::size_t n = 0; n < rows; ++n) {
            double row_kl = 0.0;
            for (std::size_t j = 0; j < k; ++j)
              row_kl += std::exp(lp[n * k + j]) * (lp[n * k + j] - lq[n * k + j]);
            for (std::size_t j = 0; j < k; ++j) {
              const double p = std::exp(lp[n * k + j]);
              gp[n * k + j] += go * p * ((lp[n * k + j] - lq[n * k + j]) - row_kl);
            }
          }
        }
        if (g.tracks(iq)) {
          auto& gq = g.grad(iq);
          for (std::size_t n = 0; n < rows; ++n)
            for (std::size_t j = 0; j < k; ++j)
              gq[n * k + j] += go * (std::exp(lq[n * k + j]) - std::exp(lp[n * k + j]));
        }
      });
}

Var mean_row_distance(Var a, Var b) {
  require_same_shape(a, b, "mean_row_distance");
  require_rank(a, 2, "mean_row_distance");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  std::vector<double> norms(rows);
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = av[n * cols + j] - bv[n * cols + j];
      sq += d * d;
    }
    norms[n] = std::sqrt(sq);
    total += norms[n];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  const auto ia = a.id(), ib = b.id();
  return a.graph().emplace(Tensor({1}, {total * inv_rows}), {a, b},
                           [ia, ib, cols, inv_rows, norms = std::move(norms)](Graph& g, std::uint32_t self) {
    const double go = g.grad(self)[0] * inv_rows;
    const auto& av = g.value(ia).values;
    const auto& bv = g.value(ib).values;
    std::vector<double>* ga = g.tracks(ia) ? &g.grad(ia) : nullptr;
    std::vector<double>* gb = g.tracks(ib) ? &g.grad(ib) : nullptr;
    for (std::size_t n = 0; n < norms.size(); ++n) {
      if (norms[n] == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) {
        const double d = go * (av[n * cols + j] - bv[n * cols + j]) / norms[n];
        if (ga) (*ga)[n * cols + j] += d;
        if (gb) (*gb)[n * cols + j] -= d;
      }
    }
  });
}

Var class_center_loss(Var features, std::span<const int> labels) {
  require_rank(features, 2, "class_center_loss");
  const std::size_t rows = features.shape()[0], cols = features.shape()[1];
  if (labels.size() != rows) fail(ErrorKind::shape, "class_center_loss: label count mismatch");
  int max_label = 0;
  for (int y : labels) {
    if (y < 0) fail(ErrorKind::invalid_input, "class_center_loss: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  const auto& fv = features.value().values;
  std::vector<double> centers(classes * cols, 0.0);
  std::vector<double> counts(classes, 0.0);
  for (std::size_t n = 0; n < rows; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    counts[y] += 1.0;
    for (std::size_t j = 0; j < cols; ++j) centers[y * cols + j] += fv[n * cols + j];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (counts[c] > 0)
      for (std::size_t j = 0; j < cols; ++j) centers[c * cols + j] /= counts[c];
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = fv[n * cols + j] - centers[y * cols + j];
      total += d * d;
    }
  }
  const double norm = 1.0 / (2.0 * static_cast<double>(rows) * static_cast<double>(cols));
  std::vector<int> y(labels.begin(), labels.end());
  const auto ifeat = features.id();
  // Deviations from a batch mean sum to zero within each class, so the
  // center's own dependence on z drops out: d/dz_i = 2 norm (z_i - c_{y_i}).
  return features.graph().emplace(
      Tensor({1}, {total * norm}), {features},
      [ifeat, cols, norm, y = std::move(y), centers = std::move(centers)](Graph& g, std::uint32_t self) {
        const double go = g.grad(self)[0];
        const auto& fv = g.value(ifeat).values;
        auto& gi = g.grad(ifeat);
        for (std::size_t n = 0; n < y.size(); ++n) {
          const auto c = static_cast<std::size_t>(y[n]);
          for (std::size_t j = 0; j < cols; ++j)
            gi[n * cols + j] += go * 2.0 * norm * (fv[n * cols + j] - centers[c * cols + j]);
        }
      });
}

Var gram_matrix(Var x, const kernels::KernelConfig& cfg, unsigned threads) {
  require_rank(x, 2, "gram_matrix");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  kernels::SampleMatrix samples(n, d, x.value().values);
  const double bandwidth = kernels::resolve_bandwidth(samples, cfg);
  kernels::GramMatrix K = kernels::gram(samples, cfg, bandwidth, threads);
  Tensor out({n, n}, std::move(K.values));
  const auto ix = x.id();
  return x.graph().emplace(std::move(out), {x}, [ix, cfg, bandwidth, n, d](Graph& g, std::uint32_t self) {
    kernels::SampleMatrix samples(n, d, g.value(ix).values);
    const kernels::GramMatrix K{n, g.value(self).values, false};
    kernels::gram_backward(samples, K, g.grad(self), cfg, bandwidth, g.grad(ix));
  });
}

Var hsic(Var K, Var L) {
  require_rank(K, 2, "hsic");
  require_same_shape(K, L, "hsic");
  const std::size_t n = K.shape()[0];
  if (K.shape()[1] != n) fail(ErrorKind::shape, "hsic: Gram matrices must be square");
  const kernels::GramMatrix gk{n, K.value().values, false};
  const kernels::GramMatrix gl{n, L.value().values, false};
  const double value = kernels::hsic_biased(gk, gl);
  const auto ik = K.id(), il = L.id();
  return K.graph().emplace(Tensor({1}, {value}), {K, L}, [ik, il, n](Graph& g, std::uint32_t self) {
    const kernels::GramMatrix gk{n, g.value(ik).values, false};
    const kernels::GramMatrix gl{n, g.value(il).values, false};
    std::vector<double> dk(n * n, 0.0), dl(n * n, 0.0);
    kernels::hsic_biased_backward(gk, gl, g.grad(self)[0], dk, dl);
    if (g.tracks(ik)) {
      auto& gi = g.grad(ik);
      for (std::size_t i = 0; i < dk.size(); ++i) gi[i] += dk[i];
    }
    if (g.tracks(il)) {
      auto& gi = g.grad(il);
      for (std::size_t i = 0; i < dl.size(); ++i) gi[i] += dl[i];
    }
  });
}

Tensor softmax_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_config, "temperature must be positive");
  if (logits.shape.size() != 2) fail(ErrorKind::shape, "softmax_temperature expects [B, K]");
  const std::size_t rows = logits.shape[0], k = logits.shape[1];
  Tensor out(logits.shape);
  const double inv_t = 1.0 / temperature;
  for (std::size_t n = 0; n < rows; ++n) {
    const double* row = logits.values.data() + n * k;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) top = std::max(top, row[j] * inv_t);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out.values[n * k + j] = std::exp(row[j] * inv_t - top);
      total += out.values[n * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out.values[n * k + j] /= total;
  }
  return out;
}

double sigma_loss(std::span<const double> logits, int label, double temperature) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    fail(ErrorKind::invalid_input, "sigma_loss: label out of range");
  }
  const Tensor row({1, logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  return 1.0 - softmax_temperature(row, temperature).values[static_cast<std::size_t>(label)];
}

}  // namespace qad::nn
