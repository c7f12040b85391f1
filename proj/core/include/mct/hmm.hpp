#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mct::hmm {

// Row-major double matrix for exact probability work.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
};

enum class Family { easy, ambiguous, persistent, high_entropy, three_state, six_state };

const std::vector<Family>& all_families();
std::string_view family_name(Family f);
Family family_from_name(std::string_view name);

enum class TransitionRule { banded, sticky, near_uniform };
std::string_view rule_name(TransitionRule r);

// Fixed generation constants. The sticky noise and near-uniform perturbation
// magnitudes are calibrated so mean transition entropies land on the family
// targets; the emission boost adds extra Dirichlet mass at each state's
// associated symbol (state i -> symbol i mod V).
inline constexpr double kStickyNoise = 0.01;
inline constexpr double kNearUniformEps = 0.01;
inline constexpr double kEmissionBoostFactor = 3.0;
inline constexpr double kPiConcentration = 1.0;

struct TransitionMatrix {
  Mat t;
  TransitionRule rule = TransitionRule::banded;
  double rho = 0.0;    // self-transition mass (banded/sticky)
  double noise = 0.0;  // additive noise magnitude used in construction
};

struct EmissionMatrix {
  Mat e;
  double concentration = 0.0;
  double boost = 0.0;  // extra Dirichlet mass at the state-associated symbol
};

struct HmmSpec {
  Family family = Family::easy;
  std::uint64_t seed = 0;
  int K = 0;
  int V = 0;
  Mat T;  // K x K row-stochastic
  Mat E;  // K x V row-stochastic
  std::vector<double> pi;
  TransitionRule rule = TransitionRule::banded;
  double rho = 0.0;
  double concentration = 0.0;
  double boost = 0.0;

  // Checks row-stochasticity of T, E and pi to 1e-12.
  void validate() const;

  std::string to_json() const;
  static HmmSpec from_json(const std::string& text);
  void save(const std::string& path) const;
  static HmmSpec load(const std::string& path);
};

struct FamilyDef {
  Family family;
  int K;
  int V;
  TransitionRule rule;
  double rho;            // unused for near_uniform
  double concentration;  // emission Dirichlet base mass
};

const FamilyDef& family_def(Family f);

TransitionMatrix build_transition(TransitionRule rule, int K, double rho, std::uint64_t seed);
EmissionMatrix build_emissions(int K, int V, double concentration, double boost,
                               std::uint64_t seed);
HmmSpec build_family(Family f, std::uint64_t seed);

struct SequenceBatch {
  int n = 0;
  int L = 0;
  int K = 0;
  int V = 0;
  std::vector<int> tokens;        // n*L
  std::vector<int> hidden;        // n*L
  std::vector<double> beliefs;    // n*L*K
  std::vector<double> bayes_pred; // n*L*V

  const int* tokens_row(int s) const { return tokens.data() + static_cast<std::size_t>(s) * L; }
  const int* hidden_row(int s) const { return hidden.data() + static_cast<std::size_t>(s) * L; }
  const double* belief_at(int s, int t) const {
    return beliefs.data() + (static_cast<std::size_t>(s) * L + t) * K;
  }
  const double* bayes_at(int s, int t) const {
    return bayes_pred.data() + (static_cast<std::size_t>(s) * L + t) * V;
  }
};

SequenceBatch sample_sequences(const HmmSpec& spec, int n, int L, std::uint64_t seed);

// Exact posterior filter over the hidden state. Returns an L x K row-major
// trajectory; each row is renormalized. Throws if a token has zero
// probability under the running predictive distribution.
std::vector<double> forward_filter(const HmmSpec& spec, std::span<const int> tokens);

// Predictive next-token distribution b T E for a belief row b.
std::vector<double> bayes_next_token(const HmmSpec& spec, std::span<const double> belief);

// Counterfactual next-token target e_i T E for a forced current state i.
std::vector<double> forced_state_target(const HmmSpec& spec, int state);

// Mean negative log predictive probability of the realized next token,
// averaged over all predicted positions (t = 1..L-1 targets).
double bayes_optimal_loss(const HmmSpec& spec, const SequenceBatch& batch);

double row_entropy(const double* p, int n);
double mean_row_entropy(const Mat& m);

}  // namespace mct::hmm
