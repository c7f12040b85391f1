#include "mct/hmm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mct/rng.hpp"

namespace mct::hmm {

namespace {

using nlohmann::json;

void normalize_row(double* p, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += p[i];
  if (!(s > 0.0)) throw std::runtime_error("normalize_row: nonpositive row sum");
  for (int i = 0; i < n; ++i) p[i] /= s;
}

void check_stochastic(const Mat& m, const char* what, double tol) {
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      if (m(i, j) < 0.0)
        throw std::runtime_error(std::string(what) + ": negative entry");
      s += m(i, j);
    }
    if (std::abs(s - 1.0) > tol)
      throw std::runtime_error(std::string(what) + ": row does not sum to 1");
  }
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  Mat m(static_cast<int>(j.size()), j.empty() ? 0 : static_cast<int>(j[0].size()));
  for (int i = 0; i < m.rows; ++i)
    for (int jj = 0; jj < m.cols; ++jj) m(i, jj) = j[i][jj].get<double>();
  return m;
}

const FamilyDef kFamilyDefs[] = {
    {Family::easy, 4, 6, TransitionRule::banded, 0.60, 0.20},
    {Family::ambiguous, 4, 6, TransitionRule::banded, 0.60, 2.50},
    {Family::persistent, 4, 6, TransitionRule::sticky, 0.82, 0.80},
    {Family::high_entropy, 4, 6, TransitionRule::near_uniform, 0.0, 1.20},
    {Family::three_state, 3, 5, TransitionRule::banded, 0.64, 0.80},
    {Family::six_state, 6, 8, TransitionRule::banded, 0.56, 1.00},
};

}  // namespace

const std::vector<Family>& all_families() {
  static const std::vector<Family> fams = {Family::easy,         Family::ambiguous,
                                           Family::persistent,   Family::high_entropy,
                                           Family::three_state,  Family::six_state};
  return fams;
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::easy: return "easy";
    case Family::ambiguous: return "ambiguous";
    case Family::persistent: return "persistent";
    case Family::high_entropy: return "high_entropy";
    case Family::three_state: return "three_state";
    case Family::six_state: return "six_state";
  }
  throw std::invalid_argument("family_name: unknown family");
}

Family family_from_name(std::string_view name) {
  for (Family f : all_families())
    if (family_name(f) == name) return f;
  throw std::invalid_argument("unknown family: " + std::string(name));
}

std::string_view rule_name(TransitionRule r) {
  switch (r) {
    case TransitionRule::banded: return "banded";
    case TransitionRule::sticky: return "sticky";
    case TransitionRule::near_uniform: return "near_uniform";
  }
  throw std::invalid_argument("rule_name: unknown rule");
}

const FamilyDef& family_def(Family f) {
  for (const FamilyDef& def : kFamilyDefs)
    if (def.family == f) return def;
  throw std::invalid_argument("family_def: unknown family");
}

void HmmSpec::validate() const {
  if (K < 1 || V < 1) throw std::runtime_error("HmmSpec: empty state or symbol space");
  check_stochastic(T, "transition matrix", 1e-12);
  check_stochastic(E, "emission matrix", 1e-12);
  Mat p(1, K);
  for (int i = 0; i < K; ++i) p(0, i) = pi[i];
  check_stochastic(p, "initial distribution", 1e-12);
}

TransitionMatrix build_transition(TransitionRule rule, int K, double rho, std::uint64_t seed) {
  if (K < 2) throw std::invalid_argument("build_transition: K must be >= 2");
  TransitionMatrix out;
  out.rule = rule;
  out.rho = rho;
  out.t = Mat(K, K);
  Mat& t = out.t;
  switch (rule) {
    case TransitionRule::banded: {
      if (!(rho > 0.0 && rho <= 1.0))
        throw std::invalid_argument("build_transition: banded rho must be in (0, 1]");
      for (int i = 0; i < K; ++i) {
        t(i, i) += rho;
        t(i, (i + K - 1) % K) += (1.0 - rho) / 2.0;
        t(i, (i + 1) % K) += (1.0 - rho) / 2.0;
      }
      break;
    }
    case TransitionRule::sticky: {
      if (!(rho > 0.0 && rho <= 1.0))
        throw std::invalid_argument("build_transition: sticky rho must be in (0, 1]");
      out.noise = kStickyNoise;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
          t(i, j) = (i == j ? rho : (1.0 - rho) / (K - 1)) + kStickyNoise;
      for (int i = 0; i < K; ++i) normalize_row(t.row(i), K);
      break;
    }
    case TransitionRule::near_uniform: {
      out.noise = kNearUniformEps;
      Rng rng = Rng(seed).child("transition_noise");
      for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) t(i, j) = 1.0 / K + rng.uniform(0.0, kNearUniformEps);
        normalize_row(t.row(i), K);
      }
      break;
    }
  }
  return out;
}

EmissionMatrix build_emissions(int K, int V, double concentration, double boost,
                               std::uint64_t seed) {
  if (K < 1 || V < 1) throw std::invalid_argument("build_emissions: K and V must be >= 1");
  if (!(concentration > 0.0))
    throw std::invalid_argument("build_emissions: concentration must be > 0");
  if (boost < 0.0) throw std::invalid_argument("build_emissions: boost must be >= 0");
  EmissionMatrix out;
  out.concentration = concentration;
  out.boost = boost;
  out.e = Mat(K, V);
  Rng rng = Rng(seed).child("emission");
  for (int i = 0; i < K; ++i) {
    std::vector<double> alpha(static_cast<std::size_t>(V), concentration);
    alpha[static_cast<std::size_t>(i % V)] += boost;
    std::vector<double> row = rng.dirichlet(alpha);
    for (int v = 0; v < V; ++v) out.e(i, v) = row[static_cast<std::size_t>(v)];
  }
  return out;
}

HmmSpec build_family(Family f, std::uint64_t seed) {
  const FamilyDef& def = family_def(f);
  HmmSpec spec;
  spec.family = f;
  spec.seed = seed;
  spec.K = def.K;
  spec.V = def.V;
  spec.rule = def.rule;
  spec.rho = def.rho;
  spec.concentration = def.concentration;
  spec.boost = kEmissionBoostFactor * def.concentration;

  // Per-component substreams hang off (family, seed) so pi, transition noise
  // and emissions never share draws. Banded and sticky transitions consume no
  // randomness and are identical across seeds.
  std::uint64_t base = splitmix64(seed ^ fnv1a(family_name(f)));
  spec.T = build_transition(def.rule, def.K, def.rho, base).t;
  spec.E = build_emissions(def.K, def.V, def.concentration, spec.boost, base).e;

  Rng pi_rng = Rng(base).child("pi");
  std::vector<double> alpha(static_cast<std::size_t>(def.K), kPiConcentration);
  spec.pi = pi_rng.dirichlet(alpha);
  spec.validate();
  return spec;
}

SequenceBatch sample_sequences(const HmmSpec& spec, int n, int L, std::uint64_t seed) {
  if (n < 1 || L < 1) throw std::invalid_argument("sample_sequences: n and L must be >= 1");
  SequenceBatch b;
  b.n = n;
  b.L = L;
  b.K = spec.K;
  b.V = spec.V;
  b.tokens.resize(static_cast<std::size_t>(n) * L);
  b.hidden.resize(static_cast<std::size_t>(n) * L);
  b.beliefs.resize(static_cast<std::size_t>(n) * L * spec.K);
  b.bayes_pred.resize(static_cast<std::size_t>(n) * L * spec.V);

  Rng rng = Rng(seed).child("sequences");
  for (int s = 0; s < n; ++s) {
    int* toks = b.tokens.data() + static_cast<std::size_t>(s) * L;
    int* hid = b.hidden.data() + static_cast<std::size_t>(s) * L;
    int state = rng.categorical(spec.pi.data(), spec.K);
    for (int t = 0; t < L; ++t) {
      if (t > 0) state = rng.categorical(spec.T.row(state), spec.K);
      hid[t] = state;
      toks[t] = rng.categorical(spec.E.row(state), spec.V);
    }
    std::vector<double> traj = forward_filter(spec, std::span<const int>(toks, L));
    std::copy(traj.begin(), traj.end(),
              b.beliefs.begin() + (static_cast<std::size_t>(s) * L) * spec.K);
    for (int t = 0; t < L; ++t) {
      std::vector<double> pred = bayes_next_token(
          spec, std::span<const double>(traj.data() + static_cast<std::size_t>(t) * spec.K,
                                        static_cast<std::size_t>(spec.K)));
      std::copy(pred.begin(), pred.end(),
                b.bayes_pred.begin() + (static_cast<std::size_t>(s) * L + t) * spec.V);
    }
  }
  return b;
}

std::vector<double> forward_filter(const HmmSpec& spec, std::span<const int> tokens) {
  const int K = spec.K;
  const int L = static_cast<int>(tokens.size());
  std::vector<double> traj(static_cast<std::size_t>(L) * K);
  std::vector<double> prior(static_cast<std::size_t>(K));
  for (int t = 0; t < L; ++t) {
    int x = tokens[static_cast<std::size_t>(t)];
    if (x < 0 || x >= spec.V) throw std::invalid_argument("forward_filter: token out of range");
    if (t == 0) {
      prior = spec.pi;
    } else {
      const double* prev = traj.data() + static_cast<std::size_t>(t - 1) * K;
      for (int j = 0; j < K; ++j) {
        double s = 0.0;
        for (int i = 0; i < K; ++i) s += prev[i] * spec.T(i, j);
        prior[static_cast<std::size_t>(j)] = s;
      }
    }
    double* cur = traj.data() + static_cast<std::size_t>(t) * K;
    double norm = 0.0;
    for (int i = 0; i < K; ++i) {
      cur[i] = prior[static_cast<std::size_t>(i)] * spec.E(i, x);
      norm += cur[i];
    }
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw std::runtime_error("forward_filter: token has zero probability (degenerate filter)");
    for (int i = 0; i < K; ++i) cur[i] /= norm;
  }
  return traj;
}

std::vector<double> bayes_next_token(const HmmSpec& spec, std::span<const double> belief) {
  if (static_cast<int>(belief.size()) != spec.K)
    throw std::invalid_argument("bayes_next_token: belief size mismatch");
  std::vector<double> bT(static_cast<std::size_t>(spec.K), 0.0);
  for (int j = 0; j < spec.K; ++j) {
    double s = 0.0;
    for (int i = 0; i < spec.K; ++i) s += belief[static_cast<std::size_t>(i)] * spec.T(i, j);
    bT[static_cast<std::size_t>(j)] = s;
  }
  std::vector<double> out(static_cast<std::size_t>(spec.V), 0.0);
  for (int v = 0; v < spec.V; ++v) {
    double s = 0.0;
    for (int j = 0; j < spec.K; ++j) s += bT[static_cast<std::size_t>(j)] * spec.E(j, v);
    out[static_cast<std::size_t>(v)] = s;
  }
  return out;
}

std::vector<double> forced_state_target(const HmmSpec& spec, int state) {
  if (state < 0 || state >= spec.K)
    throw std::invalid_argument("forced_state_target: state index out of range");
  std::vector<double> e(static_cast<std::size_t>(spec.K), 0.0);
  e[static_cast<std::size_t>(state)] = 1.0;
  return bayes_next_token(spec, e);
}

double bayes_optimal_loss(const HmmSpec& spec, const SequenceBatch& batch) {
  if (batch.V != spec.V || batch.K != spec.K)
    throw std::invalid_argument("bayes_optimal_loss: batch does not match spec");
  double total = 0.0;
  long count = 0;
  for (int s = 0; s < batch.n; ++s) {
    const int* toks = batch.tokens_row(s);
    for (int t = 0; t + 1 < batch.L; ++t) {
      double p = batch.bayes_at(s, t)[toks[t + 1]];
      total += -std::log(p);
      ++count;
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

double row_entropy(const double* p, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

double mean_row_entropy(const Mat& m) {
  check_stochastic(m, "mean_row_entropy input", 1e-8);
  double h = 0.0;
  for (int i = 0; i < m.rows; ++i) h += row_entropy(m.row(i), m.cols);
  return m.rows > 0 ? h / m.rows : 0.0;
}

std::string HmmSpec::to_json() const {
  json j;
  j["format"] = "mct-hmm-spec-v1";
  j["family"] = std::string(family_name(family));
  j["seed"] = seed;
  j["K"] = K;
  j["V"] = V;
  j["rule"] = std::string(rule_name(rule));
  j["rho"] = rho;
  j["concentration"] = concentration;
  j["boost"] = boost;
  j["T"] = mat_to_json(T);
  j["E"] = mat_to_json(E);
  j["pi"] = pi;
  return j.dump(2);
}

HmmSpec HmmSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "mct-hmm-spec-v1")
    throw std::runtime_error("HmmSpec::from_json: unknown format tag");
  HmmSpec spec;
  spec.family = family_from_name(j.at("family").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.K = j.at("K").get<int>();
  spec.V = j.at("V").get<int>();
  std::string rule = j.at("rule").get<std::string>();
  if (rule == "banded")
    spec.rule = TransitionRule::banded;
  else if (rule == "sticky")
    spec.rule = TransitionRule::sticky;
  else if (rule == "near_uniform")
    spec.rule = TransitionRule::near_uniform;
  else
    throw std::runtime_error("HmmSpec::from_json: unknown rule " + rule);
  spec.rho = j.at("rho").get<double>();
  spec.concentration = j.at("concentration").get<double>();
  spec.boost = j.at("boost").get<double>();
  spec.T = mat_from_json(j.at("T"));
  spec.E = mat_from_json(j.at("E"));
  spec.pi = j.at("pi").get<std::vector<double>>();
  spec.validate();
  return spec;
}

void HmmSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("HmmSpec::save: cannot open " + path);
  out << to_json() << "\n";
}

HmmSpec HmmSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("HmmSpec::load: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace mct::hmm
