#include "mct/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mct::model {

std::vector<std::string> capture_point_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  names.push_back("embed_out");
  for (int i = 0; i < cfg.n_layers; ++i) names.push_back("resid_post_" + std::to_string(i));
  names.push_back("final_ln");
  return names;
}

int capture_point_index(const ModelConfig& cfg, const std::string& name) {
  std::vector<std::string> names = capture_point_names(cfg);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown capture point: " + name);
}

TensorT<float> forward(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                       long n, long L, Capture* capture, const Patch* patch) {
  return forward_t<float>(cfg, params, tokens, n, L, nullptr, capture, patch);
}

namespace {

double batch_bayes_loss(const hmm::SequenceBatch& b) {
  double total = 0.0;
  long count = 0;
  for (int s = 0; s < b.n; ++s) {
    const int* toks = b.tokens_row(s);
    for (int t = 0; t + 1 < b.L; ++t) {
      total += -std::log(b.bayes_at(s, t)[toks[t + 1]]);
      ++count;
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

double eval_loss(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                 long n, long L, long chunk) {
  double total = 0.0;
  long count = 0;
  for (long start = 0; start < n; start += chunk) {
    long rows = std::min(chunk, n - start);
    std::span<const int> slice(tokens.data() + start * L, static_cast<std::size_t>(rows * L));
    TensorT<float> logits = forward(cfg, params, slice, rows, L);
    logits.shape = {rows * L, static_cast<long>(cfg.vocab)};
    std::vector<int> targets = next_token_targets(slice, rows, L);
    nn::CrossEntropyCache<float> ce;
    double loss = nn::cross_entropy_mean_fwd(
        logits, std::span<const int>(targets.data(), targets.size()), ce);
    total += loss * static_cast<double>(ce.n_predicted);
    count += ce.n_predicted;
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

Capture capture_run(const ModelConfig& cfg, nn::ParamStore& params, std::span<const int> tokens,
                    long n, long L, long chunk) {
  Capture full;
  full.names = capture_point_names(cfg);
  for (std::size_t p = 0; p < full.names.size(); ++p)
    full.points.emplace_back(std::vector<long>{n, L, static_cast<long>(cfg.d_model)});
  for (long start = 0; start < n; start += chunk) {
    long rows = std::min(chunk, n - start);
    std::span<const int> slice(tokens.data() + start * L, static_cast<std::size_t>(rows * L));
    Capture part;
    forward(cfg, params, slice, rows, L, &part);
    for (std::size_t p = 0; p < part.points.size(); ++p) {
      std::copy(part.points[p].data.begin(), part.points[p].data.end(),
                full.points[p].data.begin() +
                    static_cast<std::size_t>(start) * L * cfg.d_model);
    }
  }
  return full;
}

std::vector<double> next_token_distribution_at(const ModelConfig& cfg, nn::ParamStore& params,
                                               std::span<const int> tokens, long n, long L,
                                               long pos, const Patch* patch, long chunk) {
  pos = std::min<long>(std::max<long>(pos, 0), L - 1);
  const long v = cfg.vocab;
  std::vector<double> out(static_cast<std::size_t>(n) * v);
  for (long start = 0; start < n; start += chunk) {
    long rows = std::min(chunk, n - start);
    std::span<const int> slice(tokens.data() + start * L, static_cast<std::size_t>(rows * L));
    TensorT<float> logits = forward(cfg, params, slice, rows, L, nullptr, patch);
    for (long s = 0; s < rows; ++s) {
      const float* lr = logits.ptr() + (s * L + pos) * v;
      double mx = lr[0];
      for (long j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(lr[j]));
      double sum = 0.0;
      for (long j = 0; j < v; ++j) sum += std::exp(static_cast<double>(lr[j]) - mx);
      double* o = out.data() + static_cast<std::size_t>(start + s) * v;
      for (long j = 0; j < v; ++j) o[j] = std::exp(static_cast<double>(lr[j]) - mx) / sum;
    }
  }
  return out;
}

TrainReport train(const ModelConfig& cfg, nn::ParamStore& params,
                  const hmm::SequenceBatch& train_batch, const hmm::SequenceBatch& val_batch,
                  const TrainHyper& hyper) {
  if (train_batch.V != cfg.vocab || val_batch.V != cfg.vocab)
    throw std::invalid_argument("train: batch vocabulary does not match model config");
  const long L = train_batch.L;
  TrainReport report;
  Rng shuffle_rng = Rng(hyper.shuffle_seed).child("train_shuffle");

  std::vector<int> order(static_cast<std::size_t>(train_batch.n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> minibatch;

  nn::AdamConfig adam;
  adam.beta1 = hyper.beta1;
  adam.beta2 = hyper.beta2;
  adam.eps = hyper.eps;

  long step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      long rows = std::min<std::size_t>(hyper.batch_size, order.size() - start);
      minibatch.assign(static_cast<std::size_t>(rows * L), 0);
      for (long r = 0; r < rows; ++r) {
        const int* src = train_batch.tokens_row(order[start + static_cast<std::size_t>(r)]);
        std::copy(src, src + L, minibatch.data() + r * L);
      }
      double loss = loss_and_grad_t<float>(
          cfg, params, std::span<const int>(minibatch.data(), minibatch.size()), rows, L);
      if (!std::isfinite(loss)) throw TrainingFailure(epoch);
      params.clip_grad_global_norm(hyper.clip_norm);
      ++step;
      double warm = hyper.warmup_steps > 0
                        ? std::min(1.0, static_cast<double>(step) / hyper.warmup_steps)
                        : 1.0;
      adam.lr = hyper.lr * warm;
      params.adam_step(adam);
      epoch_loss += loss * static_cast<double>(rows);
      epoch_batches += rows;
    }
    report.epoch_train_loss.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }
  report.steps = step;
  report.final_val_loss =
      eval_loss(cfg, params,
                std::span<const int>(val_batch.tokens.data(), val_batch.tokens.size()),
                val_batch.n, val_batch.L);
  report.bayes_loss = batch_bayes_loss(val_batch);
  report.excess = report.final_val_loss - report.bayes_loss;
  report.excess_flagged = report.excess > 0.1;
  return report;
}

}  // namespace mct::model
