#include "clat/autograd.hpp"

#include <cmath>
#include <string>

#include "clat/error.hpp"

namespace clat {

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    const float* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
void gemm_nt_acc(const float* a, const float* b, float* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<int64_t>(i) * n;
    float* crow = c + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<int64_t>(p) * n;
      float s = 0.0f;
      for (int j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<int64_t>(i) * k;
    const float* brow = b + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* crow = c + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvDims {
  int n, c, h, w, f, k, stride, pad, oh, ow;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad) {
  ConvDims d{};
  d.n = xs[0];
  d.c = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.f = ws[0];
  d.k = ws[2];
  d.stride = stride;
  d.pad = pad;
  const int num_h = d.h + 2 * pad - d.k;
  const int num_w = d.w + 2 * pad - d.k;
  if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0) {
    throw ConfigError("conv output size is not a positive integer for input " + shape_str(xs) +
                      ", kernel " + shape_str(ws) + ", stride " + std::to_string(stride) +
                      ", pad " + std::to_string(pad));
  }
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  return d;
}

// col layout: [C*k*k, OH*OW]
void im2col(const float* x, const ConvDims& d, float* col) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.c; ++c) {
    const float* plane = x + static_cast<int64_t>(c) * d.h * d.w;
    for (int kh = 0; kh < d.k; ++kh) {
      for (int kw = 0; kw < d.k; ++kw) {
        float* crow = col + static_cast<int64_t>((c * d.k + kh) * d.k + kw) * ohw;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.h) {
            for (int ow = 0; ow < d.ow; ++ow) crow[oh * d.ow + ow] = 0.0f;
            continue;
          }
          const float* xrow = plane + static_cast<int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.ow; ++ow) {
            const int iw = ow * d.stride - d.pad + kw;
            crow[oh * d.ow + ow] = (iw < 0 || iw >= d.w) ? 0.0f : xrow[iw];
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, const ConvDims& d, float* dx) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.c; ++c) {
    float* plane = dx + static_cast<int64_t>(c) * d.h * d.w;
    for (int kh = 0; kh < d.k; ++kh) {
      for (int kw = 0; kw < d.k; ++kw) {
        const float* crow = col + static_cast<int64_t>((c * d.k + kh) * d.k + kw) * ohw;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.h) continue;
          float* xrow = plane + static_cast<int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.ow; ++ow) {
            const int iw = ow * d.stride - d.pad + kw;
            if (iw >= 0 && iw < d.w) xrow[iw] += crow[oh * d.ow + ow];
          }
        }
      }
    }
  }
}

struct PoolDims {
  int n, c, h, w, window, oh, ow;
};

PoolDims pool_dims(const Shape& xs, int window, const char* op) {
  if (xs.size() != 4) throw ShapeError(std::string(op) + " expects a [N,C,H,W] tensor, got " + shape_str(xs));
  if (window < 1) throw ShapeError(std::string(op) + " window must be positive");
  if (xs[2] % window != 0 || xs[3] % window != 0) {
    throw ShapeError(std::string(op) + " window " + std::to_string(window) +
                     " does not divide spatial dims of " + shape_str(xs));
  }
  return PoolDims{xs[0], xs[1], xs[2], xs[3], window, xs[2] / window, xs[3] / window};
}

}  // namespace

bool BackwardResult::has(int id) const {
  return id >= 0 && id < static_cast<int>(grads_.size()) && !grads_[static_cast<size_t>(id)].empty();
}

const Tensor& BackwardResult::at(int id) const {
  if (id < 0 || id >= static_cast<int>(grads_.size())) {
    throw UsageError("gradient requested for node " + std::to_string(id) + " which is not on the tape");
  }
  if (grads_[static_cast<size_t>(id)].empty()) {
    throw UsageError("node " + std::to_string(id) + " carries no gradient (not differentiable wrt it)");
  }
  return grads_[static_cast<size_t>(id)];
}

int Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw UsageError("node id " + std::to_string(id) + " is not on the tape");
  }
}

const TapeNode& Tape::node(int id) const {
  check_id(id);
  return nodes_[static_cast<size_t>(id)];
}

const Tensor& Tape::value(int id) const { return node(id).value; }
bool Tape::requires_grad(int id) const { return node(id).requires_grad; }

int Tape::leaf(Tensor value, bool requires_grad) {
  TapeNode n;
  n.op = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const TapeNode& na = node(a);
  const TapeNode& nb = node(b);
  if (na.value.rank() != 2 || nb.value.rank() != 2 || na.value.dim(1) != nb.value.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(na.value.shape()) + " x " +
                     shape_str(nb.value.shape()));
  }
  const int m = na.value.dim(0), k = na.value.dim(1), n = nb.value.dim(1);
  TapeNode out;
  out.op = OpKind::matmul;
  out.inputs = {a, b};
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.value = Tensor({m, n});
  gemm_nn_acc(na.value.data(), nb.value.data(), out.value.data(), m, k, n);
  return push(std::move(out));
}

int Tape::conv2d(int x, int w, int bias, int stride, int pad) {
  const TapeNode& nx = node(x);
  const TapeNode& nw = node(w);
  const TapeNode& nb = node(bias);
  if (nx.value.rank() != 4 || nw.value.rank() != 4) {
    throw ShapeError("conv2d expects x [N,C,H,W] and w [F,C,kh,kw], got " +
                     shape_str(nx.value.shape()) + " and " + shape_str(nw.value.shape()));
  }
  if (nw.value.dim(2) != nw.value.dim(3)) throw ShapeError("conv2d supports square kernels only");
  if (nx.value.dim(1) != nw.value.dim(1)) {
    throw ShapeError("conv2d channel mismatch: " + shape_str(nx.value.shape()) + " vs " +
                     shape_str(nw.value.shape()));
  }
  if (nb.value.rank() != 1 || nb.value.dim(0) != nw.value.dim(0)) {
    throw ShapeError("conv2d bias must be [F], got " + shape_str(nb.value.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d needs stride >= 1 and pad >= 0");
  const ConvDims d = conv_dims(nx.value.shape(), nw.value.shape(), stride, pad);

  TapeNode out;
  out.op = OpKind::conv2d;
  out.inputs = {x, w, bias};
  out.arg0 = stride;
  out.arg1 = pad;
  out.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  out.value = Tensor({d.n, d.f, d.oh, d.ow});

  const int ckk = d.c * d.k * d.k;
  const int ohw = d.oh * d.ow;
  std::vector<float> col(static_cast<size_t>(ckk) * ohw);
  for (int s = 0; s < d.n; ++s) {
    im2col(nx.value.data() + static_cast<int64_t>(s) * d.c * d.h * d.w, d, col.data());
    float* o = out.value.data() + static_cast<int64_t>(s) * d.f * ohw;
    for (int f = 0; f < d.f; ++f) {
      const float bv = nb.value[f];
      float* orow = o + static_cast<int64_t>(f) * ohw;
      for (int j = 0; j < ohw; ++j) orow[j] = bv;
    }
    gemm_nn_acc(nw.value.data(), col.data(), o, d.f, ckk, ohw);
  }
  return push(std::move(out));
}

int Tape::add_bias(int x, int bias) {
  const TapeNode& nx = node(x);
  const TapeNode& nb = node(bias);
  if (nb.value.rank() != 1) throw ShapeError("bias must be rank 1, got " + shape_str(nb.value.shape()));
  const int rank = nx.value.rank();
  if (rank != 2 && rank != 4) {
    throw ShapeError("add_bias expects [N,K] or [N,C,H,W], got " + shape_str(nx.value.shape()));
  }
  const int channels = nx.value.dim(1);
  if (nb.value.dim(0) != channels) {
    throw ShapeError("bias length " + shape_str(nb.value.shape()) + " does not match " +
                     shape_str(nx.value.shape()));
  }
  TapeNode out;
  out.op = OpKind::add_bias;
  out.inputs = {x, bias};
  out.requires_grad = nx.requires_grad || nb.requires_grad;
  out.value = nx.value;
  float* p = out.value.data();
  const int64_t inner = rank == 2 ? 1 : static_cast<int64_t>(nx.value.dim(2)) * nx.value.dim(3);
  const int n = nx.value.dim(0);
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < channels; ++c) {
      const float bv = nb.value[c];
      float* row = p + (static_cast<int64_t>(s) * channels + c) * inner;
      for (int64_t j = 0; j < inner; ++j) row[j] += bv;
    }
  }
  return push(std::move(out));
}

int Tape::relu(int x) {
  const TapeNode& nx = node(x);
  TapeNode out;
  out.op = OpKind::relu;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = nx.value;
  float* p = out.value.data();
  for (int64_t i = 0; i < out.value.numel(); ++i) {
    if (p[i] < 0.0f) p[i] = 0.0f;
  }
  return push(std::move(out));
}

int Tape::maxpool2d(int x, int window) {
  const TapeNode& nx = node(x);
  const PoolDims d = pool_dims(nx.value.shape(), window, "maxpool2d");
  TapeNode out;
  out.op = OpKind::maxpool2d;
  out.inputs = {x};
  out.arg0 = window;
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({d.n, d.c, d.oh, d.ow});
  out.indices.resize(static_cast<size_t>(out.value.numel()));
  const float* xp = nx.value.data();
  float* op = out.value.data();
  int64_t oi = 0;
  for (int s = 0; s < d.n; ++s) {
    for (int c = 0; c < d.c; ++c) {
      const float* plane = xp + (static_cast<int64_t>(s) * d.c + c) * d.h * d.w;
      const int64_t plane_off = (static_cast<int64_t>(s) * d.c + c) * d.h * d.w;
      for (int oh = 0; oh < d.oh; ++oh) {
        for (int ow = 0; ow < d.ow; ++ow, ++oi) {
          float best = plane[(oh * window) * d.w + ow * window];
          int best_idx = (oh * window) * d.w + ow * window;
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              const int idx = (oh * window + kh) * d.w + (ow * window + kw);
              if (plane[idx] > best) {  // first max wins ties
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          op[oi] = best;
          out.indices[static_cast<size_t>(oi)] = static_cast<int>(plane_off + best_idx);
        }
      }
    }
  }
  return push(std::move(out));
}

int Tape::avgpool2d(int x, int window) {
  const TapeNode& nx = node(x);
  const PoolDims d = pool_dims(nx.value.shape(), window, "avgpool2d");
  TapeNode out;
  out.op = OpKind::avgpool2d;
  out.inputs = {x};
  out.arg0 = window;
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({d.n, d.c, d.oh, d.ow});
  const float inv = 1.0f / static_cast<float>(window * window);
  const float* xp = nx.value.data();
  float* op = out.value.data();
  int64_t oi = 0;
  for (int s = 0; s < d.n; ++s) {
    for (int c = 0; c < d.c; ++c) {
      const float* plane = xp + (static_cast<int64_t>(s) * d.c + c) * d.h * d.w;
      for (int oh = 0; oh < d.oh; ++oh) {
        for (int ow = 0; ow < d.ow; ++ow, ++oi) {
          float acc = 0.0f;
          for (int kh = 0; kh < window; ++kh) {
            for (int kw = 0; kw < window; ++kw) {
              acc += plane[(oh * window + kh) * d.w + (ow * window + kw)];
            }
          }
          op[oi] = acc * inv;
        }
      }
    }
  }
  return push(std::move(out));
}

int Tape::flatten(int x) {
  const TapeNode& nx = node(x);
  if (nx.value.rank() < 2) throw ShapeError("flatten expects a batched tensor, got " + shape_str(nx.value.shape()));
  const int n = nx.value.dim(0);
  const int per = static_cast<int>(nx.value.numel() / n);
  TapeNode out;
  out.op = OpKind::flatten;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = nx.value.reshaped({n, per});
  return push(std::move(out));
}

int Tape::add(int a, int b) {
  const TapeNode& na = node(a);
  const TapeNode& nb = node(b);
  if (!na.value.same_shape(nb.value)) {
    throw ShapeError("add shapes differ: " + shape_str(na.value.shape()) + " vs " +
                     shape_str(nb.value.shape()));
  }
  TapeNode out;
  out.op = OpKind::add;
  out.inputs = {a, b};
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.value = na.value + nb.value;
  return push(std::move(out));
}

int Tape::sub(int a, int b) {
  const TapeNode& na = node(a);
  const TapeNode& nb = node(b);
  if (!na.value.same_shape(nb.value)) {
    throw ShapeError("sub shapes differ: " + shape_str(na.value.shape()) + " vs " +
                     shape_str(nb.value.shape()));
  }
  TapeNode out;
  out.op = OpKind::sub;
  out.inputs = {a, b};
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.value = na.value - nb.value;
  return push(std::move(out));
}

int Tape::scale(int a, float c) {
  const TapeNode& na = node(a);
  TapeNode out;
  out.op = OpKind::scale;
  out.inputs = {a};
  out.scalar = c;
  out.requires_grad = na.requires_grad;
  out.value = na.value;
  float* p = out.value.data();
  for (int64_t i = 0; i < out.value.numel(); ++i) p[i] *= c;
  return push(std::move(out));
}

int Tape::sum_all(int x) {
  const TapeNode& nx = node(x);
  double acc = 0.0;
  for (int64_t i = 0; i < nx.value.numel(); ++i) acc += nx.value[i];
  TapeNode out;
  out.op = OpKind::sum_all;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({1}, {static_cast<float>(acc)});
  return push(std::move(out));
}

int Tape::mean_all(int x) {
  const TapeNode& nx = node(x);
  double acc = 0.0;
  for (int64_t i = 0; i < nx.value.numel(); ++i) acc += nx.value[i];
  TapeNode out;
  out.op = OpKind::mean_all;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({1}, {static_cast<float>(acc / static_cast<double>(nx.value.numel()))});
  return push(std::move(out));
}

int Tape::sumsq_all(int x) {
  const TapeNode& nx = node(x);
  double acc = 0.0;
  for (int64_t i = 0; i < nx.value.numel(); ++i) {
    acc += static_cast<double>(nx.value[i]) * nx.value[i];
  }
  TapeNode out;
  out.op = OpKind::sumsq_all;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({1}, {static_cast<float>(acc)});
  return push(std::move(out));
}

int Tape::l2norm(int x) {
  const TapeNode& nx = node(x);
  TapeNode out;
  out.op = OpKind::l2norm;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  out.value = Tensor({1}, {static_cast<float>(l2_norm_value(nx.value))});
  return push(std::move(out));
}

int Tape::batch_l2norm(int x) {
  const TapeNode& nx = node(x);
  if (nx.value.rank() < 2) {
    throw ShapeError("batch_l2norm expects a batched tensor, got " + shape_str(nx.value.shape()));
  }
  const std::vector<double> norms = batch_l2_norms(nx.value);
  TapeNode out;
  out.op = OpKind::batch_l2norm;
  out.inputs = {x};
  out.requires_grad = nx.requires_grad;
  Tensor v({nx.value.dim(0)});
  for (int s = 0; s < nx.value.dim(0); ++s) v[s] = static_cast<float>(norms[static_cast<size_t>(s)]);
  out.value = std::move(v);
  return push(std::move(out));
}

int Tape::softmax_cross_entropy(int logits, const std::vector<int>& labels) {
  const TapeNode& nl = node(logits);
  if (nl.value.rank() != 2) {
    throw ShapeError("softmax_cross_entropy expects [N,K] logits, got " + shape_str(nl.value.shape()));
  }
  const int n = nl.value.dim(0), k = nl.value.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(n));
  }
  for (int s = 0; s < n; ++s) {
    if (labels[static_cast<size_t>(s)] < 0 || labels[static_cast<size_t>(s)] >= k) {
      throw InputError("label " + std::to_string(labels[static_cast<size_t>(s)]) + " out of range [0," +
                       std::to_string(k) + ") at sample " + std::to_string(s));
    }
  }
  TapeNode out;
  out.op = OpKind::softmax_xent;
  out.inputs = {logits};
  out.indices = labels;
  out.requires_grad = nl.requires_grad;
  out.saved = Tensor({n, k});
  double loss = 0.0;
  const float* lp = nl.value.data();
  float* pp = out.saved.data();
  for (int s = 0; s < n; ++s) {
    const float* row = lp + static_cast<int64_t>(s) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double log_denom = std::log(denom);
    for (int j = 0; j < k; ++j) {
      pp[static_cast<int64_t>(s) * k + j] =
          static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / denom);
    }
    loss += log_denom - (static_cast<double>(row[labels[static_cast<size_t>(s)]]) - mx);
  }
  out.value = Tensor({1}, {static_cast<float>(loss / n)});
  return push(std::move(out));
}

BackwardResult Tape::backward(int loss_id) const {
  const TapeNode& loss = node(loss_id);
  if (loss.value.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got " + shape_str(loss.value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&grads, this](int id) -> Tensor& {
    Tensor& g = grads[static_cast<size_t>(id)];
    if (g.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape());
    return g;
  };

  if (loss.requires_grad) grad_of(loss_id)[0] = 1.0f;

  for (int id = loss_id; id >= 0; --id) {
    const TapeNode& nd = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads[static_cast<size_t>(id)];
    if (g.empty() || !nd.requires_grad || nd.op == OpKind::leaf) continue;
    auto wants = [this, &nd](int slot) { return nodes_[static_cast<size_t>(nd.inputs[static_cast<size_t>(slot)])].requires_grad; };

    switch (nd.op) {
      case OpKind::matmul: {
        const Tensor& a = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(nd.inputs[1])].value;
        const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (wants(0)) gemm_nt_acc(g.data(), b.data(), grad_of(nd.inputs[0]).data(), m, n, k);
        if (wants(1)) gemm_tn_acc(a.data(), g.data(), grad_of(nd.inputs[1]).data(), m, k, n);
        break;
      }
      case OpKind::conv2d: {
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        const Tensor& w = nodes_[static_cast<size_t>(nd.inputs[1])].value;
        const ConvDims d = conv_dims(x.shape(), w.shape(), nd.arg0, nd.arg1);
        const int ckk = d.c * d.k * d.k;
        const int ohw = d.oh * d.ow;
        std::vector<float> col(static_cast<size_t>(ckk) * ohw);
        std::vector<float> dcol(static_cast<size_t>(ckk) * ohw);
        const bool want_x = wants(0), want_w = wants(1), want_b = wants(2);
        Tensor* dx = want_x ? &grad_of(nd.inputs[0]) : nullptr;
        Tensor* dw = want_w ? &grad_of(nd.inputs[1]) : nullptr;
        Tensor* db = want_b ? &grad_of(nd.inputs[2]) : nullptr;
        for (int s = 0; s < d.n; ++s) {
          const float* go = g.data() + static_cast<int64_t>(s) * d.f * ohw;
          if (want_w) {
            im2col(x.data() + static_cast<int64_t>(s) * d.c * d.h * d.w, d, col.data());
            gemm_nt_acc(go, col.data(), dw->data(), d.f, ohw, ckk);
          }
          if (want_b) {
            for (int f = 0; f < d.f; ++f) {
              float acc = 0.0f;
              const float* grow = go + static_cast<int64_t>(f) * ohw;
              for (int j = 0; j < ohw; ++j) acc += grow[j];
              (*db)[f] += acc;
            }
          }
          if (want_x) {
            std::fill(dcol.begin(), dcol.end(), 0.0f);
            gemm_tn_acc(w.data(), go, dcol.data(), d.f, ckk, ohw);
            col2im_acc(dcol.data(), d, dx->data() + static_cast<int64_t>(s) * d.c * d.h * d.w);
          }
        }
        break;
      }
      case OpKind::add_bias: {
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        const int n = x.dim(0), channels = x.dim(1);
        const int64_t inner = x.rank() == 2 ? 1 : static_cast<int64_t>(x.dim(2)) * x.dim(3);
        if (wants(0)) axpy_(grad_of(nd.inputs[0]), 1.0f, g);
        if (wants(1)) {
          Tensor& db = grad_of(nd.inputs[1]);
          for (int s = 0; s < n; ++s) {
            for (int c = 0; c < channels; ++c) {
              const float* row = g.data() + (static_cast<int64_t>(s) * channels + c) * inner;
              float acc = 0.0f;
              for (int64_t j = 0; j < inner; ++j) acc += row[j];
              db[c] += acc;
            }
          }
        }
        break;
      }
      case OpKind::relu: {
        if (!wants(0)) break;
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        Tensor& dx = grad_of(nd.inputs[0]);
        for (int64_t i = 0; i < x.numel(); ++i) {
          if (x[i] > 0.0f) dx[i] += g[i];
        }
        break;
      }
      case OpKind::maxpool2d: {
        if (!wants(0)) break;
        Tensor& dx = grad_of(nd.inputs[0]);
        for (int64_t i = 0; i < nd.value.numel(); ++i) dx[nd.indices[static_cast<size_t>(i)]] += g[i];
        break;
      }
      case OpKind::avgpool2d: {
        if (!wants(0)) break;
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        const PoolDims d = pool_dims(x.shape(), nd.arg0, "avgpool2d");
        const float inv = 1.0f / static_cast<float>(d.window * d.window);
        Tensor& dx = grad_of(nd.inputs[0]);
        int64_t oi = 0;
        for (int s = 0; s < d.n; ++s) {
          for (int c = 0; c < d.c; ++c) {
            float* plane = dx.data() + (static_cast<int64_t>(s) * d.c + c) * d.h * d.w;
            for (int oh = 0; oh < d.oh; ++oh) {
              for (int ow = 0; ow < d.ow; ++ow, ++oi) {
                const float gv = g[oi] * inv;
                for (int kh = 0; kh < d.window; ++kh) {
                  for (int kw = 0; kw < d.window; ++kw) {
                    plane[(oh * d.window + kh) * d.w + (ow * d.window + kw)] += gv;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::flatten: {
        if (!wants(0)) break;
        axpy_(grad_of(nd.inputs[0]), 1.0f, g.reshaped(nodes_[static_cast<size_t>(nd.inputs[0])].value.shape()));
        break;
      }
      case OpKind::add: {
        if (wants(0)) axpy_(grad_of(nd.inputs[0]), 1.0f, g);
        if (wants(1)) axpy_(grad_of(nd.inputs[1]), 1.0f, g);
        break;
      }
      case OpKind::sub: {
        if (wants(0)) axpy_(grad_of(nd.inputs[0]), 1.0f, g);
        if (wants(1)) axpy_(grad_of(nd.inputs[1]), -1.0f, g);
        break;
      }
      case OpKind::scale: {
        if (wants(0)) axpy_(grad_of(nd.inputs[0]), nd.scalar, g);
        break;
      }
      case OpKind::sum_all: {
        if (!wants(0)) break;
        Tensor& dx = grad_of(nd.inputs[0]);
        const float gv = g[0];
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gv;
        break;
      }
      case OpKind::mean_all: {
        if (!wants(0)) break;
        Tensor& dx = grad_of(nd.inputs[0]);
        const float gv = g[0] / static_cast<float>(dx.numel());
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gv;
        break;
      }
      case OpKind::sumsq_all: {
        if (!wants(0)) break;
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        Tensor& dx = grad_of(nd.inputs[0]);
        const float gv = g[0];
        for (int64_t i = 0; i < x.numel(); ++i) dx[i] += 2.0f * x[i] * gv;
        break;
      }
      case OpKind::l2norm: {
        if (!wants(0)) break;
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        Tensor& dx = grad_of(nd.inputs[0]);
        const float norm = nd.value[0];
        if (norm == 0.0f) break;  // gradient defined as 0 at the zero tensor
        const float gv = g[0] / norm;
        for (int64_t i = 0; i < x.numel(); ++i) dx[i] += x[i] * gv;
        break;
      }
      case OpKind::batch_l2norm: {
        if (!wants(0)) break;
        const Tensor& x = nodes_[static_cast<size_t>(nd.inputs[0])].value;
        Tensor& dx = grad_of(nd.inputs[0]);
        const int n = x.dim(0);
        const int64_t per = x.numel() / n;
        for (int s = 0; s < n; ++s) {
          const float norm = nd.value[s];
          if (norm == 0.0f) continue;
          const float gv = g[s] / norm;
          const float* xr = x.data() + static_cast<int64_t>(s) * per;
          float* dr = dx.data() + static_cast<int64_t>(s) * per;
          for (int64_t i = 0; i < per; ++i) dr[i] += xr[i] * gv;
        }
        break;
      }
      case OpKind::softmax_xent: {
        if (!wants(0)) break;
        const Tensor& probs = nd.saved;
        Tensor& dl = grad_of(nd.inputs[0]);
        const int n = probs.dim(0), k = probs.dim(1);
        const float gv = g[0] / static_cast<float>(n);
        for (int s = 0; s < n; ++s) {
          const float* pr = probs.data() + static_cast<int64_t>(s) * k;
          float* dr = dl.data() + static_cast<int64_t>(s) * k;
          for (int j = 0; j < k; ++j) dr[j] += gv * pr[j];
          dr[nd.indices[static_cast<size_t>(s)]] -= gv;
        }
        break;
      }
      case OpKind::leaf:
        break;
    }
  }

  // Keep gradients only for nodes that require them.
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!nodes_[i].requires_grad) grads[i] = Tensor();
  }
  return BackwardResult(std::move(grads));
}

}  // namespace clat
