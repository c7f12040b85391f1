#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mct/hmm.hpp"
#include "mct/nn.hpp"

namespace mct::model {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 4;
  int d_mlp = 256;
  int max_len = 64;
  int vocab = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_mlp < 1 || max_len < 1 || vocab < 1)
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  }
};

// Residual-stream capture points in stream order: the embedding output, each
// post-block residual, and the final layer-normalized stream.
std::vector<std::string> capture_point_names(const ModelConfig& cfg);
int capture_point_index(const ModelConfig& cfg, const std::string& name);

template <typename T>
struct CaptureT {
  std::vector<std::string> names;
  std::vector<TensorT<T>> points;  // each [n, L, d_model]
};
using Capture = CaptureT<float>;

// Replace the residual value at (point, position) with a fixed vector before
// downstream computation resumes. Applied to every sequence in the batch.
template <typename T>
struct PatchT {
  std::string point;
  long pos = 0;
  std::vector<T> vector;
};
using Patch = PatchT<float>;

namespace detail {

template <typename T>
struct BlockTrace {
  TensorT<T> x_in;
  nn::LayerNormCache<T> ln1_cache;
  TensorT<T> ln1_out;
  TensorT<T> q, k, v;
  TensorT<T> att_probs;  // [n*heads, L, L]
  TensorT<T> att_mix;
  TensorT<T> x_mid;
  nn::LayerNormCache<T> ln2_cache;
  TensorT<T> ln2_out;
  TensorT<T> mlp_pre;
  TensorT<T> mlp_act;
};

template <typename T>
struct ForwardTrace {
  long n = 0, L = 0;
  TensorT<T> x0;
  std::vector<BlockTrace<T>> blocks;
  TensorT<T> x_final;
  nn::LayerNormCache<T> lnf_cache;
  TensorT<T> lnf_out;
};

// y = x W + b with gradient accumulation on the backward pass.
template <typename T>
TensorT<T> linear_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  TensorT<T> y = nn::matmul_fwd(x, w);
  for (long r = 0; r < y.dim(0); ++r)
    for (long j = 0; j < y.dim(1); ++j) y(r, j) += b(j);
  return y;
}

template <typename T>
void linear_bwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy, TensorT<T>& dx,
                TensorT<T>& dw, TensorT<T>& db) {
  nn::matmul_bwd(x, w, dy, dx, dw);
  for (long r = 0; r < dy.dim(0); ++r)
    for (long j = 0; j < dy.dim(1); ++j) db(j) += dy(r, j);
}

}  // namespace detail

// Token embedding, learned positional embedding, pre-LN blocks with
// multi-head causal attention and a gelu MLP, final LN, untied unembedding.
// Weights are normal(0, 0.02), biases zero, LN scales one.
template <typename T>
nn::ParamStoreT<T> build_model_t(const ModelConfig& cfg) {
  cfg.validate();
  nn::ParamStoreT<T> store;
  long d = cfg.d_model, m = cfg.d_mlp, v = cfg.vocab;
  store.add("embed.tok", {v, d});
  store.add("embed.pos", {cfg.max_len, d});
  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string b = "block" + std::to_string(i) + ".";
    store.add(b + "ln1.gamma", {d});
    store.add(b + "ln1.beta", {d});
    store.add(b + "attn.wq", {d, d});
    store.add(b + "attn.bq", {d});
    store.add(b + "attn.wk", {d, d});
    store.add(b + "attn.bk", {d});
    store.add(b + "attn.wv", {d, d});
    store.add(b + "attn.bv", {d});
    store.add(b + "attn.wo", {d, d});
    store.add(b + "attn.bo", {d});
    store.add(b + "ln2.gamma", {d});
    store.add(b + "ln2.beta", {d});
    store.add(b + "mlp.w1", {d, m});
    store.add(b + "mlp.b1", {m});
    store.add(b + "mlp.w2", {m, d});
    store.add(b + "mlp.b2", {d});
  }
  store.add("final_ln.gamma", {d});
  store.add("final_ln.beta", {d});
  store.add("unembed.w", {d, v});
  store.add("unembed.b", {v});

  Rng rng = Rng(cfg.seed).child("model_init");
  for (const std::string& name : store.names()) {
    TensorT<T>& val = store.at(name).value;
    bool is_gamma = name.ends_with("gamma");
    bool is_weight = val.ndim() == 2;
    for (long i = 0; i < val.numel(); ++i) {
      if (is_gamma)
        val(i) = T(1);
      else if (is_weight)
        val(i) = static_cast<T>(rng.normal(0.0, 0.02));
      else
        val(i) = T(0);
    }
  }
  return store;
}

inline nn::ParamStore build_model(const ModelConfig& cfg) { return build_model_t<float>(cfg); }

// Runs the model on n sequences of length L (row-major token matrix).
// Returns logits [n, L, vocab]. Optionally captures the residual stream and
// applies a single-position patch; logits at positions before the patch are
// untouched by it.
template <typename T>
TensorT<T> forward_t(const ModelConfig& cfg, nn::ParamStoreT<T>& params,
                     std::span<const int> tokens, long n, long L,
                     detail::ForwardTrace<T>* trace_out = nullptr,
                     CaptureT<T>* capture = nullptr, const PatchT<T>* patch = nullptr) {
  cfg.validate();
  if (L > cfg.max_len) throw std::invalid_argument("forward: sequence length exceeds max_len");
  if (static_cast<long>(tokens.size()) != n * L)
    throw std::invalid_argument("forward: token buffer size mismatch");
  const long d = cfg.d_model, heads = cfg.n_heads, hd = d / heads;
  const long N = n * L;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  detail::ForwardTrace<T> local_trace;
  detail::ForwardTrace<T>& tr = trace_out ? *trace_out : local_trace;
  tr.n = n;
  tr.L = L;
  tr.blocks.resize(static_cast<std::size_t>(cfg.n_layers));

  int patch_point = -1;
  long patch_pos = 0;
  if (patch) {
    patch_point = capture_point_index(cfg, patch->point);
    patch_pos = std::min<long>(std::max<long>(patch->pos, 0), L - 1);
    if (static_cast<long>(patch->vector.size()) != d)
      throw std::invalid_argument("forward: patch vector has wrong dimension");
  }
  auto apply_patch = [&](TensorT<T>& x, int point_idx) {
    if (patch_point != point_idx) return;
    for (long s = 0; s < n; ++s) {
      T* row = x.ptr() + (s * L + patch_pos) * d;
      std::copy(patch->vector.begin(), patch->vector.end(), row);
    }
  };
  auto record_capture = [&](const TensorT<T>& x, int point_idx) {
    if (!capture) return;
    TensorT<T> snap({n, L, d});
    std::copy(x.data.begin(), x.data.end(), snap.data.begin());
    capture->names.push_back(capture_point_names(cfg)[static_cast<std::size_t>(point_idx)]);
    capture->points.push_back(std::move(snap));
  };

  if (capture) {
    capture->names.clear();
    capture->points.clear();
  }

  // Embedding: token vector plus learned positional vector.
  std::vector<int> pos_ids(static_cast<std::size_t>(N));
  for (long s = 0; s < n; ++s)
    for (long t = 0; t < L; ++t) pos_ids[static_cast<std::size_t>(s * L + t)] = static_cast<int>(t);
  tr.x0 = nn::embed_gather_fwd(params.at("embed.tok").value, tokens);
  {
    TensorT<T> pos = nn::embed_gather_fwd(params.at("embed.pos").value,
                                          std::span<const int>(pos_ids.data(), pos_ids.size()));
    for (long i = 0; i < tr.x0.numel(); ++i) tr.x0(i) += pos(i);
  }
  apply_patch(tr.x0, 0);
  record_capture(tr.x0, 0);

  const TensorT<T>* x_cur = &tr.x0;
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    detail::BlockTrace<T>& bt = tr.blocks[static_cast<std::size_t>(layer)];
    std::string prefix = "block" + std::to_string(layer) + ".";
    bt.x_in = *x_cur;

    bt.ln1_out = nn::layernorm_fwd(bt.x_in, params.at(prefix + "ln1.gamma").value,
                                   params.at(prefix + "ln1.beta").value, bt.ln1_cache);
    bt.q = detail::linear_fwd(bt.ln1_out, params.at(prefix + "attn.wq").value,
                              params.at(prefix + "attn.bq").value);
    bt.k = detail::linear_fwd(bt.ln1_out, params.at(prefix + "attn.wk").value,
                              params.at(prefix + "attn.bk").value);
    bt.v = detail::linear_fwd(bt.ln1_out, params.at(prefix + "attn.wv").value,
                              params.at(prefix + "attn.bv").value);

    TensorT<T> scores({n * heads, L, L});
    for (long s = 0; s < n; ++s)
      for (long h = 0; h < heads; ++h) {
        const T* qp = bt.q.ptr() + s * L * d + h * hd;
        const T* kp = bt.k.ptr() + s * L * d + h * hd;
        T* sp = scores.ptr() + (s * heads + h) * L * L;
        gemm<T>(false, true, L, L, hd, att_scale, qp, d, kp, d, T(0), sp, L);
      }
    nn::causal_mask_apply(scores);
    bt.att_probs = nn::softmax_rows_fwd(scores);

    bt.att_mix = TensorT<T>({N, d});
    for (long s = 0; s < n; ++s)
      for (long h = 0; h < heads; ++h) {
        const T* pp = bt.att_probs.ptr() + (s * heads + h) * L * L;
        const T* vp = bt.v.ptr() + s * L * d + h * hd;
        T* mp = bt.att_mix.ptr() + s * L * d + h * hd;
        gemm<T>(false, false, L, hd, L, T(1), pp, L, vp, d, T(0), mp, d);
      }
    TensorT<T> att_out = detail::linear_fwd(bt.att_mix, params.at(prefix + "attn.wo").value,
                                            params.at(prefix + "attn.bo").value);

    bt.x_mid = bt.x_in;
    for (long i = 0; i < N * d; ++i) bt.x_mid(i) += att_out(i);

    bt.ln2_out = nn::layernorm_fwd(bt.x_mid, params.at(prefix + "ln2.gamma").value,
                                   params.at(prefix + "ln2.beta").value, bt.ln2_cache);
    bt.mlp_pre = detail::linear_fwd(bt.ln2_out, params.at(prefix + "mlp.w1").value,
                                    params.at(prefix + "mlp.b1").value);
    bt.mlp_act = nn::gelu_fwd(bt.mlp_pre);
    TensorT<T> mlp_out = detail::linear_fwd(bt.mlp_act, params.at(prefix + "mlp.w2").value,
                                            params.at(prefix + "mlp.b2").value);

    TensorT<T> x_next = bt.x_mid;
    for (long i = 0; i < N * d; ++i) x_next(i) += mlp_out(i);
    apply_patch(x_next, layer + 1);
    record_capture(x_next, layer + 1);

    if (layer + 1 < cfg.n_layers) {
      tr.blocks[static_cast<std::size_t>(layer + 1)].x_in = std::move(x_next);
      x_cur = &tr.blocks[static_cast<std::size_t>(layer + 1)].x_in;
    } else {
      tr.x_final = std::move(x_next);
      x_cur = &tr.x_final;
    }
  }

  tr.lnf_out = nn::layernorm_fwd(tr.x_final, params.at("final_ln.gamma").value,
                                 params.at("final_ln.beta").value, tr.lnf_cache);
  apply_patch(tr.lnf_out, cfg.n_layers + 1);
  record_capture(tr.lnf_out, cfg.n_layers + 1);

  TensorT<T> logits =
      detail::linear_fwd(tr.lnf_out, params.at("unembed.w").value, params.at("unembed.b").value);
  logits.shape = {n, L, static_cast<long>(cfg.vocab)};
  return logits;
}

// Next-token targets for a row-major [n, L] token matrix: position t predicts
// the token at t+1; the last position of each sequence carries no target.
inline std::vector<int> next_token_targets(std::span<const int> tokens, long n, long L) {
  std::vector<int> targets(tokens.size());
  for (long s = 0; s < n; ++s)
    for (long t = 0; t < L; ++t)
      targets[static_cast<std::size_t>(s * L + t)] =
          (t + 1 < L) ? tokens[static_cast<std::size_t>(s * L + t + 1)] : -1;
  return targets;
}

// Forward + cross-entropy + full backward; accumulates parameter gradients
// and returns the mean next-token loss of the batch.
template <typename T>
double loss_and_grad_t(const ModelConfig& cfg, nn::ParamStoreT<T>& params,
                       std::span<const int> tokens, long n, long L) {
  const long d = cfg.d_model, heads = cfg.n_heads, hd = d / heads, m = cfg.d_mlp;
  const long N = n * L;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  detail::ForwardTrace<T> tr;
  TensorT<T> logits = forward_t<T>(cfg, params, tokens, n, L, &tr);
  logits.shape = {N, static_cast<long>(cfg.vocab)};

  std::vector<int> targets = next_token_targets(tokens, n, L);
  nn::CrossEntropyCache<T> ce;
  double loss =
      nn::cross_entropy_mean_fwd(logits, std::span<const int>(targets.data(), targets.size()), ce);

  TensorT<T> dlogits({N, static_cast<long>(cfg.vocab)});
  nn::cross_entropy_mean_bwd(ce, std::span<const int>(targets.data(), targets.size()), dlogits);

  TensorT<T> dlnf({N, d});
  detail::linear_bwd(tr.lnf_out, params.at("unembed.w").value, dlogits, dlnf,
                     params.at("unembed.w").grad, params.at("unembed.b").grad);

  TensorT<T> dx({N, d});
  nn::layernorm_bwd(tr.x_final, params.at("final_ln.gamma").value, tr.lnf_cache, dlnf, dx,
                    params.at("final_ln.gamma").grad, params.at("final_ln.beta").grad);

  for (int layer = cfg.n_layers - 1; layer >= 0; --layer) {
    detail::BlockTrace<T>& bt = tr.blocks[static_cast<std::size_t>(layer)];
    std::string prefix = "block" + std::to_string(layer) + ".";

    // MLP branch: dx covers both the residual path and the MLP output.
    TensorT<T> dmlp_act({N, m});
    detail::linear_bwd(bt.mlp_act, params.at(prefix + "mlp.w2").value, dx, dmlp_act,
                       params.at(prefix + "mlp.w2").grad, params.at(prefix + "mlp.b2").grad);
    TensorT<T> dmlp_pre({N, m});
    nn::gelu_bwd(bt.mlp_pre, dmlp_act, dmlp_pre);
    TensorT<T> dln2({N, d});
    detail::linear_bwd(bt.ln2_out, params.at(prefix + "mlp.w1").value, dmlp_pre, dln2,
                       params.at(prefix + "mlp.w1").grad, params.at(prefix + "mlp.b1").grad);
    nn::layernorm_bwd(bt.x_mid, params.at(prefix + "ln2.gamma").value, bt.ln2_cache, dln2, dx,
                      params.at(prefix + "ln2.gamma").grad, params.at(prefix + "ln2.beta").grad);

    // Attention branch.
    TensorT<T> datt_mix({N, d});
    detail::linear_bwd(bt.att_mix, params.at(prefix + "attn.wo").value, dx, datt_mix,
                       params.at(prefix + "attn.wo").grad, params.at(prefix + "attn.bo").grad);

    TensorT<T> dq({N, d}), dk({N, d}), dv({N, d});
    TensorT<T> dprobs({n * heads, L, L});
    for (long s = 0; s < n; ++s)
      for (long h = 0; h < heads; ++h) {
        const T* dmp = datt_mix.ptr() + s * L * d + h * hd;
        const T* vp = bt.v.ptr() + s * L * d + h * hd;
        const T* pp = bt.att_probs.ptr() + (s * heads + h) * L * L;
        T* dpp = dprobs.ptr() + (s * heads + h) * L * L;
        gemm<T>(false, true, L, L, hd, T(1), dmp, d, vp, d, T(0), dpp, L);
        gemm<T>(true, false, L, hd, L, T(1), pp, L, dmp, d, T(1), dv.ptr() + s * L * d + h * hd,
                d);
      }
    TensorT<T> dscores({n * heads, L, L});
    nn::softmax_rows_bwd(bt.att_probs, dprobs, dscores);
    for (long s = 0; s < n; ++s)
      for (long h = 0; h < heads; ++h) {
        const T* dsp = dscores.ptr() + (s * heads + h) * L * L;
        const T* qp = bt.q.ptr() + s * L * d + h * hd;
        const T* kp = bt.k.ptr() + s * L * d + h * hd;
        gemm<T>(false, false, L, hd, L, att_scale, dsp, L, kp, d, T(1),
                dq.ptr() + s * L * d + h * hd, d);
        gemm<T>(true, false, L, hd, L, att_scale, dsp, L, qp, d, T(1),
                dk.ptr() + s * L * d + h * hd, d);
      }

    TensorT<T> dln1({N, d});
    detail::linear_bwd(bt.ln1_out, params.at(prefix + "attn.wq").value, dq, dln1,
                       params.at(prefix + "attn.wq").grad, params.at(prefix + "attn.bq").grad);
    detail::linear_bwd(bt.ln1_out, params.at(prefix + "attn.wk").value, dk, dln1,
                       params.at(prefix + "attn.wk").grad, params.at(prefix + "attn.bk").grad);
    detail::linear_bwd(bt.ln1_out, params.at(prefix + "attn.wv").value, dv, dln1,
                       params.at(prefix + "attn.wv").grad, params.at(prefix + "attn.bv").grad);
    nn::layernorm_bwd(bt.x_in, params.at(prefix + "ln1.gamma").value, bt.ln1_cache, dln1, dx,
                      params.at(prefix + "ln1.gamma").grad, params.at(prefix + "ln1.beta").grad);
  }

  std::vector<int> pos_ids(static_cast<std::size_t>(N));
  for (long s = 0; s < n; ++s)
    for (long t = 0; t < L; ++t) pos_ids[static_cast<std::size_t>(s * L + t)] = static_cast<int>(t);
  nn::embed_gather_bwd(tokens, dx, params.at("embed.tok").grad);
  nn::embed_gather_bwd(std::span<const int>(pos_ids.data(), pos_ids.size()), dx,
                       params.at("embed.pos").grad);
  return loss;
}

// ----- float-model conveniences used by the benchmark pipeline -----

TensorT<float> forward(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                       long n, long L, Capture* capture = nullptr, const Patch* patch = nullptr);

// Mean next-token cross entropy over a token matrix, evaluated in chunks.
double eval_loss(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                 long n, long L, long chunk = 128);

// Residual-stream capture over a full batch, evaluated in chunks.
Capture capture_run(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                    long n, long L, long chunk = 128);

// Softmax of the logits row at `pos` for every sequence; [n, vocab] doubles.
std::vector<double> next_token_distribution_at(const ModelConfig& cfg, nn::ParamStore& params,
                                               std::span<const int> tokens, long n, long L,
                                               long pos, const Patch* patch = nullptr,
                                               long chunk = 128);

struct TrainHyper {
  double lr = 3e-4;
  int warmup_steps = 200;  // linear warmup to lr
  int batch_size = 64;
  int epochs = 15;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t shuffle_seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_train_loss;
  double final_val_loss = 0.0;
  double bayes_loss = 0.0;
  double excess = 0.0;  // val - bayes; may be negative from sampling noise
  bool excess_flagged = false;  // excess > 0.1
  long steps = 0;
};

struct TrainingFailure : std::runtime_error {
  int epoch;
  explicit TrainingFailure(int ep)
      : std::runtime_error("training diverged (loss is not finite) at epoch " +
                           std::to_string(ep)),
        epoch(ep) {}
};

TrainReport train(const ModelConfig& cfg, nn::ParamStore& params,
                  const hmm::SequenceBatch& train_batch, const hmm::SequenceBatch& val_batch,
                  const TrainHyper& hyper);

}  // namespace mct::model
