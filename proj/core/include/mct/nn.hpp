#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mct/gemm.hpp"
#include "mct/rng.hpp"
#include "mct/tensor.hpp"

// Closed set of forward primitives with hand-written backward rules. The
// model architecture is fixed, so there is no tape; the transformer calls
// these in order and replays them in reverse. Every primitive has an exact
// analytic gradient checked against central finite differences in the tests.
namespace mct::nn {

inline void check_shapes(bool ok, const std::string& op, const std::string& a,
                         const std::string& b) {
  if (!ok) throw std::invalid_argument(op + ": shape mismatch " + a + " vs " + b);
}

// ----- matmul -----

template <typename T>
TensorT<T> matmul_fwd(const TensorT<T>& a, const TensorT<T>& b) {
  check_shapes(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul", a.shape_str(),
               b.shape_str());
  TensorT<T> c({a.dim(0), b.dim(1)});
  gemm<T>(false, false, a.dim(0), b.dim(1), a.dim(1), T(1), a.ptr(), a.dim(1), b.ptr(), b.dim(1),
          T(0), c.ptr(), c.dim(1));
  return c;
}

template <typename T>
void matmul_bwd(const TensorT<T>& a, const TensorT<T>& b, const TensorT<T>& dc, TensorT<T>& da,
                TensorT<T>& db) {
  check_shapes(dc.ndim() == 2 && dc.dim(0) == a.dim(0) && dc.dim(1) == b.dim(1), "matmul_bwd",
               dc.shape_str(), a.shape_str() + "x" + b.shape_str());
  // dA += dC B^T, dB += A^T dC
  gemm<T>(false, true, a.dim(0), a.dim(1), b.dim(1), T(1), dc.ptr(), dc.dim(1), b.ptr(), b.dim(1),
          T(1), da.ptr(), da.dim(1));
  gemm<T>(true, false, b.dim(0), b.dim(1), a.dim(0), T(1), a.ptr(), a.dim(1), dc.ptr(), dc.dim(1),
          T(1), db.ptr(), db.dim(1));
}

// ----- add (same shape, or broadcast of a length-d row bias) -----

template <typename T>
TensorT<T> add_fwd(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape == b.shape) {
    TensorT<T> c = a;
    for (long i = 0; i < c.numel(); ++i) c(i) += b(i);
    return c;
  }
  long d = b.numel();
  check_shapes(b.ndim() == 1 && a.numel() % d == 0 && a.dim(a.ndim() - 1) == d, "add",
               a.shape_str(), b.shape_str());
  TensorT<T> c = a;
  long rows = a.numel() / d;
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < d; ++j) c(r * d + j) += b(j);
  return c;
}

template <typename T>
void add_bwd(const TensorT<T>& a, const TensorT<T>& b, const TensorT<T>& dc, TensorT<T>& da,
             TensorT<T>& db) {
  for (long i = 0; i < a.numel(); ++i) da(i) += dc(i);
  if (a.shape == b.shape) {
    for (long i = 0; i < b.numel(); ++i) db(i) += dc(i);
  } else {
    long d = b.numel();
    long rows = a.numel() / d;
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < d; ++j) db(j) += dc(r * d + j);
  }
}

// ----- layer normalization over the last dimension -----

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
  std::vector<T> mean;  // one per row
  std::vector<T> rstd;
};

template <typename T>
TensorT<T> layernorm_fwd(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                         LayerNormCache<T>& cache) {
  long d = x.dim(x.ndim() - 1);
  check_shapes(gamma.numel() == d && beta.numel() == d, "layernorm", x.shape_str(),
               gamma.shape_str());
  long rows = x.numel() / d;
  TensorT<T> y(x.shape);
  cache.mean.resize(static_cast<std::size_t>(rows));
  cache.rstd.resize(static_cast<std::size_t>(rows));
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T* yr = y.ptr() + r * d;
    double mu = 0.0;
    for (long j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (long j = 0; j < d; ++j) {
      double diff = xr[j] - mu;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.mean[static_cast<std::size_t>(r)] = static_cast<T>(mu);
    cache.rstd[static_cast<std::size_t>(r)] = static_cast<T>(rstd);
    for (long j = 0; j < d; ++j) {
      T xhat = static_cast<T>((xr[j] - mu) * rstd);
      yr[j] = xhat * gamma(j) + beta(j);
    }
  }
  return y;
}

template <typename T>
void layernorm_bwd(const TensorT<T>& x, const TensorT<T>& gamma, const LayerNormCache<T>& cache,
                   const TensorT<T>& dy, TensorT<T>& dx, TensorT<T>& dgamma, TensorT<T>& dbeta) {
  long d = x.dim(x.ndim() - 1);
  long rows = x.numel() / d;
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    const T* dyr = dy.ptr() + r * d;
    T* dxr = dx.ptr() + r * d;
    double mu = cache.mean[static_cast<std::size_t>(r)];
    double rstd = cache.rstd[static_cast<std::size_t>(r)];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (long j = 0; j < d; ++j) {
      double xhat = (xr[j] - mu) * rstd;
      double dxhat = static_cast<double>(dyr[j]) * gamma(j);
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dgamma(j) += static_cast<T>(dyr[j] * xhat);
      dbeta(j) += dyr[j];
    }
    double inv_d = 1.0 / static_cast<double>(d);
    for (long j = 0; j < d; ++j) {
      double xhat = (xr[j] - mu) * rstd;
      double dxhat = static_cast<double>(dyr[j]) * gamma(j);
      dxr[j] += static_cast<T>(rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat));
    }
  }
}

// ----- row-wise softmax (entries at -inf get probability zero) -----

template <typename T>
TensorT<T> softmax_rows_fwd(const TensorT<T>& x) {
  long n = x.dim(x.ndim() - 1);
  long rows = x.numel() / n;
  TensorT<T> y(x.shape);
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * n;
    T* yr = y.ptr() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (long j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
    double total = 0.0;
    for (long j = 0; j < n; ++j) {
      double e = std::isinf(static_cast<double>(xr[j])) && xr[j] < T(0)
                     ? 0.0
                     : std::exp(static_cast<double>(xr[j]) - mx);
      yr[j] = static_cast<T>(e);
      total += e;
    }
    for (long j = 0; j < n; ++j) yr[j] = static_cast<T>(yr[j] / total);
  }
  return y;
}

template <typename T>
void softmax_rows_bwd(const TensorT<T>& y, const TensorT<T>& dy, TensorT<T>& dx) {
  long n = y.dim(y.ndim() - 1);
  long rows = y.numel() / n;
  for (long r = 0; r < rows; ++r) {
    const T* yr = y.ptr() + r * n;
    const T* dyr = dy.ptr() + r * n;
    T* dxr = dx.ptr() + r * n;
    double dot = 0.0;
    for (long j = 0; j < n; ++j) dot += static_cast<double>(dyr[j]) * yr[j];
    for (long j = 0; j < n; ++j)
      dxr[j] += static_cast<T>(yr[j] * (static_cast<double>(dyr[j]) - dot));
  }
}

// ----- causal mask: strictly-future scores to -inf -----
// Applies in place to a stack of L x L score blocks. Backward is the
// identity on unmasked entries; masked entries carry zero probability
// through softmax, so no gradient flows there.

template <typename T>
void causal_mask_apply(TensorT<T>& scores) {
  long L = scores.dim(scores.ndim() - 1);
  check_shapes(scores.ndim() >= 2 && scores.dim(scores.ndim() - 2) == L, "causal_mask",
               scores.shape_str(), "[...,L,L]");
  long blocks = scores.numel() / (L * L);
  for (long b = 0; b < blocks; ++b) {
    T* s = scores.ptr() + b * L * L;
    for (long i = 0; i < L; ++i)
      for (long j = i + 1; j < L; ++j)
        s[i * L + j] = -std::numeric_limits<T>::infinity();
  }
}

// ----- gelu (exact erf form) -----

template <typename T>
TensorT<T> gelu_fwd(const TensorT<T>& x) {
  TensorT<T> y(x.shape);
  for (long i = 0; i < x.numel(); ++i) {
    double v = x(i);
    y(i) = static_cast<T>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865476)));
  }
  return y;
}

template <typename T>
void gelu_bwd(const TensorT<T>& x, const TensorT<T>& dy, TensorT<T>& dx) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  for (long i = 0; i < x.numel(); ++i) {
    double v = x(i);
    double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
    double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx(i) += static_cast<T>(dy(i) * (cdf + v * pdf));
  }
}

// ----- embedding gather / scatter -----

template <typename T>
TensorT<T> embed_gather_fwd(const TensorT<T>& table, std::span<const int> ids) {
  check_shapes(table.ndim() == 2, "embed_gather", table.shape_str(), "[V,d]");
  long d = table.dim(1);
  TensorT<T> out({static_cast<long>(ids.size()), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    int id = ids[r];
    if (id < 0 || id >= table.dim(0))
      throw std::invalid_argument("embed_gather: id out of range: " + std::to_string(id));
    const T* src = table.ptr() + static_cast<long>(id) * d;
    std::copy(src, src + d, out.ptr() + static_cast<long>(r) * d);
  }
  return out;
}

template <typename T>
void embed_gather_bwd(std::span<const int> ids, const TensorT<T>& dout, TensorT<T>& dtable) {
  long d = dtable.dim(1);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const T* g = dout.ptr() + static_cast<long>(r) * d;
    T* dst = dtable.ptr() + static_cast<long>(ids[r]) * d;
    for (long j = 0; j < d; ++j) dst[j] += g[j];
  }
}

// ----- mean cross entropy over rows with target >= 0 -----

template <typename T>
struct CrossEntropyCache {
  TensorT<T> probs;
  long n_predicted = 0;
};

template <typename T>
double cross_entropy_mean_fwd(const TensorT<T>& logits, std::span<const int> targets,
                              CrossEntropyCache<T>& cache) {
  check_shapes(logits.ndim() == 2 && logits.dim(0) == static_cast<long>(targets.size()),
               "cross_entropy", logits.shape_str(), std::to_string(targets.size()) + " targets");
  long rows = logits.dim(0), v = logits.dim(1);
  cache.probs = TensorT<T>({rows, v});
  double total = 0.0;
  long count = 0;
  for (long r = 0; r < rows; ++r) {
    const T* lr = logits.ptr() + r * v;
    T* pr = cache.probs.ptr() + r * v;
    double mx = lr[0];
    for (long j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(lr[j]));
    double sum = 0.0;
    for (long j = 0; j < v; ++j) sum += std::exp(static_cast<double>(lr[j]) - mx);
    double log_z = mx + std::log(sum);
    for (long j = 0; j < v; ++j)
      pr[j] = static_cast<T>(std::exp(static_cast<double>(lr[j]) - log_z));
    int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt >= 0) {
      if (tgt >= v) throw std::invalid_argument("cross_entropy: target out of range");
      total += log_z - static_cast<double>(lr[tgt]);
      ++count;
    }
  }
  cache.n_predicted = count;
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

template <typename T>
void cross_entropy_mean_bwd(const CrossEntropyCache<T>& cache, std::span<const int> targets,
                            TensorT<T>& dlogits) {
  long rows = cache.probs.dim(0), v = cache.probs.dim(1);
  T scale = static_cast<T>(1.0 / static_cast<double>(cache.n_predicted));
  for (long r = 0; r < rows; ++r) {
    int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0) continue;
    const T* pr = cache.probs.ptr() + r * v;
    T* dr = dlogits.ptr() + r * v;
    for (long j = 0; j < v; ++j) dr[j] += scale * pr[j];
    dr[tgt] -= scale;
  }
}

// ----- parameter store and Adam -----

template <typename T>
struct ParamT {
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> m;  // Adam first moment
  TensorT<T> v;  // Adam second moment
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters in insertion order. Names are the stable addressing
// scheme used by checkpoints, activation capture and patching.
template <typename T>
class ParamStoreT {
 public:
  ParamT<T>& add(const std::string& name, std::vector<long> shape) {
    if (index_.count(name)) throw std::invalid_argument("param already exists: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, ParamT<T>{}});
    ParamT<T>& p = entries_.back().second;
    p.value = TensorT<T>(shape);
    p.grad = TensorT<T>(shape);
    p.m = TensorT<T>(shape);
    p.v = TensorT<T>(std::move(shape));
    return p;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ParamT<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const ParamT<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  std::pair<const std::string&, ParamT<T>&> entry(std::size_t i) {
    return {entries_[i].first, entries_[i].second};
  }

  long param_count() const {
    long n = 0;
    for (const auto& e : entries_) n += e.second.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.second.grad.fill(T(0));
  }

  std::int64_t step() const { return step_; }

  double grad_global_norm() const {
    double sq = 0.0;
    for (const auto& e : entries_)
      for (long i = 0; i < e.second.grad.numel(); ++i) {
        double g = e.second.grad(i);
        sq += g * g;
      }
    return std::sqrt(sq);
  }

  void clip_grad_global_norm(double max_norm) {
    double norm = grad_global_norm();
    if (norm > max_norm && norm > 0.0) {
      T scale = static_cast<T>(max_norm / norm);
      for (auto& e : entries_)
        for (long i = 0; i < e.second.grad.numel(); ++i) e.second.grad(i) *= scale;
    }
  }

  // Bias-corrected Adam on every parameter; gradients are zeroed afterwards.
  void adam_step(const AdamConfig& cfg) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& e : entries_) {
      ParamT<T>& p = e.second;
      for (long i = 0; i < p.value.numel(); ++i) {
        double g = p.grad(i);
        double m = cfg.beta1 * p.m(i) + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * p.v(i) + (1.0 - cfg.beta2) * g * g;
        p.m(i) = static_cast<T>(m);
        p.v(i) = static_cast<T>(v);
        double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        p.value(i) = static_cast<T>(p.value(i) - update);
      }
      p.grad.fill(T(0));
    }
  }

 private:
  std::vector<std::pair<std::string, ParamT<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

using ParamStore = ParamStoreT<float>;

// Versioned binary checkpoint of parameter values ("MCTC" tag).
void save_checkpoint(const std::string& path, const ParamStore& store);
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace mct::nn
