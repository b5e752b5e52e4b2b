#pragma once

// Shared helpers for the unit and acceptance suites: random tensors, the
// central finite-difference oracle, reference implementations, small stats
// and toy network builders. Everything here is independent of the library
// code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "clat/network.hpp"
#include "clat/rng.hpp"
#include "clat/tensor.hpp"

namespace clat::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

/// Pushes every element away from the relu kink so that finite differences
/// with h=1e-3 stay on one side of it.
inline void nudge_from_zero(Tensor& t, float margin = 0.05f) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] >= 0.0f ? t[i] + 2 * margin : t[i] - 2 * margin;
  }
}

/// Ensures the top-two entries of every pooling window are separated, so a
/// +-h probe cannot flip the argmax.
inline void separate_pool_ties(Tensor& t, int window, float gap = 0.05f) {
  const int n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      float* plane = t.data() + (static_cast<int64_t>(s) * c + ch) * h * w;
      for (int oh = 0; oh < h / window; ++oh) {
        for (int ow = 0; ow < w / window; ++ow) {
          int best = -1;
          float best_v = 0.0f, second = 0.0f;
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              const int idx = (oh * window + kh) * w + (ow * window + kw);
              if (best < 0 || plane[idx] > best_v) {
                second = best < 0 ? plane[idx] : best_v;
                best_v = plane[idx];
                best = idx;
              } else if (plane[idx] > second) {
                second = plane[idx];
              }
            }
          }
          if (best_v - second < gap) plane[best] += 2 * gap;
        }
      }
    }
  }
}

using DVec = std::vector<double>;

inline DVec to_dvec(const Tensor& t) {
  DVec v(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) v[static_cast<size_t>(i)] = t[i];
  return v;
}

/// Central finite differences with h=1e-3 of a scalar function evaluated
/// entirely in 64-bit arithmetic.
inline Tensor finite_difference_grad(const std::function<double(const DVec&)>& f, const Tensor& x,
                                     double h = 1e-3) {
  Tensor grad(x.shape());
  DVec probe = to_dvec(x);
  for (size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[static_cast<int64_t>(i)] = static_cast<float>((up - down) / (2.0 * h));
  }
  return grad;
}

/// max_i |a_i - n_i| / max(1, |a_i|, |n_i|)
inline double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
  double worst = 0.0;
  for (int64_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(n)});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

// 64-bit reference implementations of every differentiable op, independent
// of the tape code paths. These are the finite-difference oracles.

inline DVec d_matmul(const DVec& a, const DVec& b, int m, int k, int n) {
  DVec out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
      out[static_cast<size_t>(i * n + j)] = acc;
    }
  }
  return out;
}

inline DVec d_conv2d(const DVec& x, int n, int c, int h, int w_dim, const DVec& w, const DVec& bias,
                     int f, int k, int stride, int pad) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w_dim + 2 * pad - k) / stride + 1;
  DVec out(static_cast<size_t>(n) * f * oh * ow, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int fo = 0; fo < f; ++fo) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[static_cast<size_t>(fo)];
          for (int ci = 0; ci < c; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              for (int kw = 0; kw < k; ++kw) {
                const int iy = y * stride - pad + kh;
                const int ix = xx * stride - pad + kw;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w_dim) continue;
                acc += x[static_cast<size_t>(((s * c + ci) * h + iy) * w_dim + ix)] *
                       w[static_cast<size_t>(((fo * c + ci) * k + kh) * k + kw)];
              }
            }
          }
          out[static_cast<size_t>(((s * f + fo) * oh + y) * ow + xx)] = acc;
        }
      }
    }
  }
  return out;
}

inline DVec d_add_bias(const DVec& x, int n, int channels, int inner, const DVec& b) {
  DVec out = x;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < channels; ++c) {
      for (int i = 0; i < inner; ++i) {
        out[static_cast<size_t>((s * channels + c) * inner + i)] += b[static_cast<size_t>(c)];
      }
    }
  }
  return out;
}

inline DVec d_relu(const DVec& x) {
  DVec out = x;
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

inline DVec d_maxpool(const DVec& x, int n, int c, int h, int w, int window) {
  const int oh = h / window, ow = w / window;
  DVec out(static_cast<size_t>(n) * c * oh * ow, 0.0);
  size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = x.data() + (static_cast<size_t>(s) * c + ch) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx, ++oi) {
          double best = plane[(y * window) * w + xx * window];
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              best = std::max(best, plane[(y * window + kh) * w + (xx * window + kw)]);
            }
          }
          out[oi] = best;
        }
      }
    }
  }
  return out;
}

inline DVec d_avgpool(const DVec& x, int n, int c, int h, int w, int window) {
  const int oh = h / window, ow = w / window;
  DVec out(static_cast<size_t>(n) * c * oh * ow, 0.0);
  size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = x.data() + (static_cast<size_t>(s) * c + ch) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx, ++oi) {
          double acc = 0.0;
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              acc += plane[(y * window + kh) * w + (xx * window + kw)];
            }
          }
          out[oi] = acc / (window * window);
        }
      }
    }
  }
  return out;
}

inline double d_xent(const DVec& logits, int n, int k, const std::vector<int>& labels) {
  double loss = 0.0;
  for (int s = 0; s < n; ++s) {
    const double* row = logits.data() + static_cast<size_t>(s) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    loss += std::log(denom) - (row[labels[static_cast<size_t>(s)]] - mx);
  }
  return loss / n;
}

inline double d_sumsq(const DVec& x) {
  double acc = 0.0;
  for (const double v : x) acc += v * v;
  return acc;
}

inline double d_sum(const DVec& x) {
  double acc = 0.0;
  for (const double v : x) acc += v;
  return acc;
}

inline double d_l2norm(const DVec& x) { return std::sqrt(d_sumsq(x)); }

inline DVec d_batch_l2norm(const DVec& x, int n) {
  const size_t per = x.size() / static_cast<size_t>(n);
  DVec out(static_cast<size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    double acc = 0.0;
    for (size_t i = 0; i < per; ++i) acc += x[static_cast<size_t>(s) * per + i] * x[static_cast<size_t>(s) * per + i];
    out[static_cast<size_t>(s)] = std::sqrt(acc);
  }
  return out;
}

// Float32 forward references used by the value tests.

inline Tensor matmul_reference(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
      }
      out[i * n + j] = static_cast<float>(acc);
    }
  }
  return out;
}

inline Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                               int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), width = x.dim(3);
  const int f = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (width + 2 * pad - k) / stride + 1;
  Tensor out({n, f, oh, ow});
  for (int s = 0; s < n; ++s) {
    for (int fo = 0; fo < f; ++fo) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[fo];
          for (int ci = 0; ci < c; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              for (int kw = 0; kw < k; ++kw) {
                const int iy = y * stride - pad + kh;
                const int ix = xx * stride - pad + kw;
                if (iy < 0 || iy >= h || ix < 0 || ix >= width) continue;
                acc += static_cast<double>(x[((s * c + ci) * h + iy) * width + ix]) *
                       w[((fo * c + ci) * k + kh) * k + kw];
              }
            }
          }
          out[((s * f + fo) * oh + y) * ow + xx] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

inline double cross_entropy_reference(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  double loss = 0.0;
  for (int s = 0; s < n; ++s) {
    double mx = logits[s * k];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[s * k + j]));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits[s * k + j]) - mx);
    loss += std::log(denom) - (static_cast<double>(logits[s * k + labels[static_cast<size_t>(s)]]) - mx);
  }
  return loss / n;
}

// Stats helpers.

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&v](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t p = i; p <= j; ++p) r[order[p]] = mean_rank;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// Toy networks.

/// Six-layer CNN used across the trainer/criticality suites: four conv
/// units and two dense units on CxHxW inputs (H, W divisible by 4).
inline Network toy_cnn6(int in_channels, int image_size, int classes, uint64_t seed) {
  Network net({in_channels, image_size, image_size}, classes);
  net.add_conv(4, 3, 1, 1, {{PostOp::relu, 0}});
  net.add_conv(8, 3, 1, 1, {{PostOp::relu, 0}, {PostOp::maxpool, 2}});
  net.add_conv(8, 3, 1, 1, {{PostOp::relu, 0}});
  net.add_conv(16, 3, 1, 1, {{PostOp::relu, 0}, {PostOp::maxpool, 2}, {PostOp::flatten, 0}});
  net.add_dense(48, {{PostOp::relu, 0}});
  net.add_dense(classes);
  Rng rng(derive_seed(seed, "init", 0));
  net.init_params(rng);
  return net;
}

/// Small MLP: `hidden` layers of the given width, then the classifier head.
inline Network toy_mlp(int inputs, int width, int hidden, int classes, uint64_t seed) {
  Network net({1, 1, inputs}, classes);
  for (int i = 0; i < hidden; ++i) net.add_dense(width, {{PostOp::relu, 0}});
  net.add_dense(classes);
  Rng rng(derive_seed(seed, "init", 0));
  net.init_params(rng);
  return net;
}

}  // namespace clat::testing
