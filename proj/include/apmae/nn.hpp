#pragma once

// Minimal transformer building blocks with hand-written backward passes.
// Everything is templated on the scalar type so the same code trains in float
// and is gradient-checked in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "apmae/errors.hpp"
#include "apmae/rng.hpp"

namespace apmae::nn {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

struct TensorInfo {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::size_t offset = 0;
  bool decay = false;      // subject to weight decay
  bool trainable = true;   // fixed tensors (positional tables) are stored but never updated
};

/// Flat storage for every named tensor of a model plus its gradient.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Index rows, Index cols, bool decay, bool trainable = true) {
    TensorInfo info{std::move(name), rows, cols, values_.size(), decay, trainable};
    values_.resize(values_.size() + static_cast<std::size_t>(rows * cols), T(0));
    grads_.resize(values_.size(), T(0));
    tensors_.push_back(std::move(info));
    return tensors_.size() - 1;
  }

  MatrixMap<T> value(std::size_t id) {
    const auto& t = tensors_[id];
    return MatrixMap<T>(values_.data() + t.offset, t.rows, t.cols);
  }
  ConstMatrixMap<T> value(std::size_t id) const {
    const auto& t = tensors_[id];
    return ConstMatrixMap<T>(values_.data() + t.offset, t.rows, t.cols);
  }
  MatrixMap<T> grad(std::size_t id) {
    const auto& t = tensors_[id];
    return MatrixMap<T>(grads_.data() + t.offset, t.rows, t.cols);
  }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::span<T> grads() { return grads_; }
  std::span<const T> grads() const { return grads_; }

  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return i;
    throw ConfigError("no tensor named " + name);
  }

  /// Name of the tensor owning flat coordinate `flat`.
  const TensorInfo& owner(std::size_t flat) const {
    for (const auto& t : tensors_)
      if (flat >= t.offset && flat < t.offset + static_cast<std::size_t>(t.rows * t.cols)) return t;
    throw ContractError("coordinate out of range");
  }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

  void fill_truncated_normal(std::size_t id, Rng& rng, double stddev) {
    auto v = value(id);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(rng.truncated_normal(stddev));
  }

 private:
  std::vector<TensorInfo> tensors_;
  std::vector<T> values_;
  std::vector<T> grads_;
};

inline constexpr double kInitStd = 0.02;

// ---------------------------------------------------------------------------

// Column sums accumulated row by row; Eigen's vectorised colwise reduction
// depends on buffer alignment and would break bit reproducibility.
template <typename T, typename Dst, typename Src>
void add_column_sums(Dst&& dst, const Src& m) {
  for (Index r = 0; r < m.rows(); ++r) dst += m.row(r);
}

template <typename T>
struct Linear {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out
  bool has_bias = true;
  Index in = 0;
  Index out = 0;

  void init(ParamStore<T>& ps, const std::string& name, Index in_dim, Index out_dim, bool with_bias, Rng& rng) {
    in = in_dim;
    out = out_dim;
    has_bias = with_bias;
    weight = ps.add(name + ".weight", in, out, true);
    ps.fill_truncated_normal(weight, rng, kInitStd);
    if (has_bias) bias = ps.add(name + ".bias", 1, out, false);
  }

  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Matrix<T>& y) const {
    y.noalias() = x * ps.value(weight);
    if (has_bias) y.rowwise() += ps.value(bias).row(0);
  }

  /// Accumulates parameter gradients; writes the input gradient when dx != nullptr.
  void backward(ParamStore<T>& ps, const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>* dx) const {
    ps.grad(weight).noalias() += x.transpose() * dy;
    if (has_bias) add_column_sums<T>(ps.grad(bias).row(0), dy);
    if (dx) dx->noalias() = dy * ps.value(weight).transpose();
  }
};

template <typename T>
struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  Index dim = 0;
  T eps = T(1e-5);

  struct Cache {
    Matrix<T> xhat;
    Vector<T> rstd;
  };

  void init(ParamStore<T>& ps, const std::string& name, Index d) {
    dim = d;
    gamma = ps.add(name + ".gamma", 1, d, false);
    ps.value(gamma).setOnes();
    beta = ps.add(name + ".beta", 1, d, false);
  }

  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Matrix<T>& y, Cache& c) const {
    const Index n = x.rows();
    c.xhat.resize(n, dim);
    c.rstd.resize(n);
    const auto g = ps.value(gamma).row(0);
    const auto b = ps.value(beta).row(0);
    y.resize(n, dim);
    for (Index i = 0; i < n; ++i) {
      const T mean = x.row(i).mean();
      const T var = (x.row(i).array() - mean).square().mean();
      const T rstd = T(1) / std::sqrt(var + eps);
      c.rstd(i) = rstd;
      c.xhat.row(i) = (x.row(i).array() - mean) * rstd;
      y.row(i) = c.xhat.row(i).cwiseProduct(g) + b;
    }
  }

  void backward(ParamStore<T>& ps, const Matrix<T>& dy, const Cache& c, Matrix<T>& dx) const {
    const Index n = dy.rows();
    const auto g = ps.value(gamma).row(0);
    add_column_sums<T>(ps.grad(gamma).row(0), (dy.array() * c.xhat.array()).matrix().eval());
    add_column_sums<T>(ps.grad(beta).row(0), dy);
    dx.resize(n, dim);
    for (Index i = 0; i < n; ++i) {
      const auto dxhat = (dy.row(i).array() * g.array()).eval();
      const T mean_d = dxhat.mean();
      const T mean_dx = (dxhat * c.xhat.row(i).array()).mean();
      dx.row(i) = c.rstd(i) * (dxhat - mean_d - c.xhat.row(i).array() * mean_dx);
    }
  }
};

template <typename T>
inline T gelu(T x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  const T u = T(kC) * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad(T x) {
  constexpr double kC = 0.7978845608028654;
  const T x2 = x * x;
  const T u = T(kC) * (x + T(0.044715) * x2 * x);
  const T t = std::tanh(u);
  const T du = T(kC) * (T(1) + T(3 * 0.044715) * x2);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  struct Cache {
    Matrix<T> pre;
    Matrix<T> tanh;  // tanh of the GELU inner argument
    Matrix<T> act;
  };

  void init(ParamStore<T>& ps, const std::string& name, Index dim, Index hidden, Rng& rng) {
    fc1.init(ps, name + ".fc1", dim, hidden, true, rng);
    fc2.init(ps, name + ".fc2", hidden, dim, true, rng);
  }

  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Matrix<T>& y, Cache& c) const {
    fc1.forward(ps, x, c.pre);
    // Same formula as gelu(), written on arrays so Eigen vectorises the tanh.
    const auto x3 = c.pre.array().cube();
    c.tanh = (T(0.7978845608028654) * (c.pre.array() + T(0.044715) * x3)).tanh().matrix();
    c.act = (T(0.5) * c.pre.array() * (T(1) + c.tanh.array())).matrix();
    fc2.forward(ps, c.act, y);
  }

  void backward(ParamStore<T>& ps, const Matrix<T>& x, const Matrix<T>& dy, const Cache& c, Matrix<T>& dx) const {
    Matrix<T> dact;
    fc2.backward(ps, c.act, dy, &dact);
    const auto u = c.pre.array();
    const auto t = c.tanh.array();
    dact.array() *= T(0.5) * (T(1) + t) +
                    T(0.5) * u * (T(1) - t * t) * T(0.7978845608028654) * (T(1) + T(3 * 0.044715) * u * u);
    fc1.backward(ps, x, dact, &dx);
  }
};

/// Multi-head self-attention over a batch of equal-length sequences stacked
/// row-wise (rows = batch * seq). A head listed in `head_off` has its output
/// slice zeroed before the output projection.
template <typename T>
struct Attention {
  Linear<T> qkv;
  Linear<T> proj;
  Index dim = 0;
  Index heads = 0;
  bool causal = false;

  struct Cache {
    Index batch = 0;
    Index seq = 0;
    Matrix<T> qkv;
    Matrix<T> probs;  // (batch * heads * seq) x seq
    Matrix<T> ctx;    // batch*seq x dim, zeroed heads already applied
    std::vector<std::uint8_t> head_off;
  };

  void init(ParamStore<T>& ps, const std::string& name, Index d, Index h, bool is_causal, Rng& rng) {
    if (h <= 0 || d % h != 0) {
      throw ConfigError("width " + std::to_string(d) + " is not divisible by " + std::to_string(h) + " heads");
    }
    dim = d;
    heads = h;
    causal = is_causal;
    qkv.init(ps, name + ".qkv", d, 3 * d, true, rng);
    proj.init(ps, name + ".proj", d, d, false, rng);
  }

  Index head_dim() const { return dim / heads; }

  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Index batch, Index seq, Matrix<T>& y, Cache& c,
               std::span<const std::uint8_t> head_off = {}) const {
    c.batch = batch;
    c.seq = seq;
    c.head_off.assign(static_cast<std::size_t>(heads), 0);
    for (std::size_t h = 0; h < head_off.size() && h < c.head_off.size(); ++h) c.head_off[h] = head_off[h];
    qkv.forward(ps, x, c.qkv);
    c.probs.resize(batch * heads * seq, seq);
    c.ctx.setZero(batch * seq, dim);
    const Index dh = head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
#pragma omp parallel for schedule(static)
    for (Index bh = 0; bh < batch * heads; ++bh) {
      const Index b = bh / heads;
      const Index h = bh % heads;
      const auto q = c.qkv.block(b * seq, h * dh, seq, dh);
      const auto k = c.qkv.block(b * seq, dim + h * dh, seq, dh);
      const auto v = c.qkv.block(b * seq, 2 * dim + h * dh, seq, dh);
      auto p = c.probs.block(bh * seq, 0, seq, seq);
      p.noalias() = (q * k.transpose()) * scale;
      for (Index i = 0; i < seq; ++i) {
        const Index visible = causal ? i + 1 : seq;
        T mx = p(i, 0);
        for (Index j = 1; j < visible; ++j) mx = std::max(mx, p(i, j));
        T sum = 0;
        for (Index j = 0; j < visible; ++j) sum += (p(i, j) = std::exp(p(i, j) - mx));
        const T inv = T(1) / sum;
        for (Index j = 0; j < visible; ++j) p(i, j) *= inv;
        for (Index j = visible; j < seq; ++j) p(i, j) = T(0);
      }
      if (!c.head_off[static_cast<std::size_t>(h)]) c.ctx.block(b * seq, h * dh, seq, dh).noalias() = p * v;
    }
    proj.forward(ps, c.ctx, y);
  }

  void backward(ParamStore<T>& ps, const Matrix<T>& x, const Matrix<T>& dy, const Cache& c, Matrix<T>& dx) const {
    Matrix<T> dctx;
    proj.backward(ps, c.ctx, dy, &dctx);
    Matrix<T> dqkv = Matrix<T>::Zero(c.qkv.rows(), c.qkv.cols());
    const Index seq = c.seq;
    const Index dh = head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
#pragma omp parallel for schedule(static)
    for (Index bh = 0; bh < c.batch * heads; ++bh) {
      const Index b = bh / heads;
      const Index h = bh % heads;
      if (c.head_off[static_cast<std::size_t>(h)]) continue;
      const auto q = c.qkv.block(b * seq, h * dh, seq, dh);
      const auto k = c.qkv.block(b * seq, dim + h * dh, seq, dh);
      const auto v = c.qkv.block(b * seq, 2 * dim + h * dh, seq, dh);
      const auto p = c.probs.block(bh * seq, 0, seq, seq);
      const auto dout = dctx.block(b * seq, h * dh, seq, dh);
      dqkv.block(b * seq, 2 * dim + h * dh, seq, dh).noalias() = p.transpose() * dout;
      Matrix<T> dp = dout * v.transpose();
      // softmax backward: dS = P * (dP - rowsum(dP * P))
      for (Index i = 0; i < seq; ++i) {
        const T dot = dp.row(i).dot(p.row(i));
        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale;
      }
      dqkv.block(b * seq, h * dh, seq, dh).noalias() = dp * k;
      dqkv.block(b * seq, dim + h * dh, seq, dh).noalias() = dp.transpose() * q;
    }
    qkv.backward(ps, x, dqkv, &dx);
  }

  /// Probabilities of head h for sequence b (seq x seq, zero above the diagonal when causal).
  auto head_probs(const Cache& c, Index b, Index h) const { return c.probs.block((b * heads + h) * c.seq, 0, c.seq, c.seq); }
};

/// Pre-norm transformer block.
template <typename T>
struct Block {
  LayerNorm<T> ln1;
  Attention<T> attn;
  LayerNorm<T> ln2;
  Mlp<T> mlp;

  struct Cache {
    Matrix<T> x;
    Matrix<T> a;  // ln1 output
    Matrix<T> x1;
    Matrix<T> c;  // ln2 output
    typename LayerNorm<T>::Cache ln1_cache;
    typename Attention<T>::Cache attn_cache;
    typename LayerNorm<T>::Cache ln2_cache;
    typename Mlp<T>::Cache mlp_cache;
  };

  void init(ParamStore<T>& ps, const std::string& name, Index dim, Index heads, Index hidden, bool causal, Rng& rng) {
    ln1.init(ps, name + ".ln1", dim);
    attn.init(ps, name + ".attn", dim, heads, causal, rng);
    ln2.init(ps, name + ".ln2", dim);
    mlp.init(ps, name + ".mlp", dim, hidden, rng);
  }

  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Index batch, Index seq, Matrix<T>& y, Cache& c,
               std::span<const std::uint8_t> head_off = {}, bool skip_attention = false) const {
    c.x = x;
    ln1.forward(ps, x, c.a, c.ln1_cache);
    Matrix<T> o;
    attn.forward(ps, c.a, batch, seq, o, c.attn_cache, head_off);
    if (skip_attention) o.setZero();
    c.x1 = x + o;
    ln2.forward(ps, c.x1, c.c, c.ln2_cache);
    Matrix<T> m;
    mlp.forward(ps, c.c, m, c.mlp_cache);
    y = c.x1 + m;
  }

  void backward(ParamStore<T>& ps, const Matrix<T>& dy, const Cache& c, Matrix<T>& dx) const {
    Matrix<T> dc, dx1, da, tmp;
    mlp.backward(ps, c.c, dy, c.mlp_cache, dc);
    ln2.backward(ps, dc, c.ln2_cache, tmp);
    dx1 = dy + tmp;
    attn.backward(ps, c.a, dx1, c.attn_cache, da);
    ln1.backward(ps, da, c.ln1_cache, tmp);
    dx = dx1 + tmp;
  }
};

/// A stack of blocks followed by a final LayerNorm.
template <typename T>
struct Stack {
  std::vector<Block<T>> blocks;
  LayerNorm<T> norm;

  struct Cache {
    std::vector<typename Block<T>::Cache> blocks;
    Matrix<T> pre_norm;
    typename LayerNorm<T>::Cache norm_cache;
  };

  void init(ParamStore<T>& ps, const std::string& name, Index layers, Index dim, Index heads, Index hidden,
            bool causal, Rng& rng) {
    blocks.resize(static_cast<std::size_t>(layers));
    for (Index l = 0; l < layers; ++l)
      blocks[static_cast<std::size_t>(l)].init(ps, name + ".block" + std::to_string(l), dim, heads, hidden, causal, rng);
    norm.init(ps, name + ".norm", dim);
  }

  /// `head_off[l]`, when present, lists zeroed heads of layer l.
  void forward(const ParamStore<T>& ps, const Matrix<T>& x, Index batch, Index seq, Matrix<T>& y, Cache& c,
               const std::vector<std::vector<std::uint8_t>>* head_off = nullptr, bool skip_attention = false) const {
    c.blocks.resize(blocks.size());
    Matrix<T> h = x;
    Matrix<T> next;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      std::span<const std::uint8_t> off;
      if (head_off && l < head_off->size()) off = (*head_off)[l];
      blocks[l].forward(ps, h, batch, seq, next, c.blocks[l], off, skip_attention);
      h.swap(next);
    }
    c.pre_norm = h;
    norm.forward(ps, h, y, c.norm_cache);
  }

  void backward(ParamStore<T>& ps, const Matrix<T>& dy, const Cache& c, Matrix<T>& dx) const {
    Matrix<T> g;
    norm.backward(ps, dy, c.norm_cache, g);
    Matrix<T> next;
    for (std::size_t l = blocks.size(); l-- > 0;) {
      blocks[l].backward(ps, g, c.blocks[l], next);
      g.swap(next);
    }
    dx = std::move(g);
  }
};

// ---------------------------------------------------------------------------
// Optimisation

/// Linear warmup followed by cosine annealing to `floor`; the final step
/// (total - 1) lands exactly on the floor.
inline double cosine_lr(std::uint64_t step, std::uint64_t total, double peak, double warmup_fraction,
                        double floor = 0.0) {
  if (total == 0) return peak;
  const auto warmup = static_cast<std::uint64_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup + 1) return floor;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - 1 - warmup));
  constexpr double kPi = 3.141592653589793238462643383279;
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(kPi * progress));
}

/// AdamW with decoupled weight decay applied to tensors flagged `decay`.
template <typename T>
class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.95, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& ps, double lr) {
    if (m_.size() != ps.values().size()) {
      m_.assign(ps.values().size(), 0.0);
      v_.assign(ps.values().size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto values = ps.values();
    auto grads = ps.grads();
    for (const auto& info : ps.tensors()) {
      if (!info.trainable) continue;
      const std::size_t end = info.offset + static_cast<std::size_t>(info.rows * info.cols);
      const double decay = info.decay ? lr * weight_decay_ : 0.0;
      for (std::size_t i = info.offset; i < end; ++i) {
        const double g = static_cast<double>(grads[i]);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        double p = static_cast<double>(values[i]);
        p -= decay * p;
        p -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        values[i] = static_cast<T>(p);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
  double sq = 0.0;
  for (T g : ps.grads()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (T& g : ps.grads()) g *= s;
  }
  return norm;
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace apmae::nn
