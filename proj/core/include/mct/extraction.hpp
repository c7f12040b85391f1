#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mct/hmm.hpp"

namespace mct::extract {

using hmm::Mat;

struct KmeansResult {
  std::vector<int> labels;
  Mat centroids;  // M x d
  double inertia = 0.0;
  int iterations = 0;
  std::vector<char> empty_cluster;  // flagged when a cluster had to be re-seeded
};

// Lloyd iterations from a k-means++ seeding; best of `restarts` runs by
// inertia. Nearest-centroid ties break toward the lowest centroid index and
// empty clusters are re-seeded to the farthest point.
KmeansResult kmeans(const double* points, long n, int d, int m, std::uint64_t seed,
                    int restarts = 5, int max_iters = 300, double tol = 1e-6);

struct PcaResult {
  Mat projected;               // n x r
  Mat components;              // r x d, orthonormal rows
  std::vector<double> mean;    // d
  std::vector<double> variances;  // r, non-increasing
};

// Mean-centered projection onto the top-r principal directions. Component
// signs follow a fixed convention: the largest-magnitude coordinate of each
// direction is positive.
PcaResult pca_project(const double* points, long n, int d, int r);

// Projection matrix entries are i.i.d. normal(0, 1/r), so squared norms are
// preserved in expectation.
Mat random_project(const double* points, long n, int d, int r, std::uint64_t seed);

enum class Method {
  residual_kmeans,
  pca_kmeans,
  randproj_kmeans,
  belief_kmeans,
  token_baseline,
  true_state_oracle,
};

const std::vector<Method>& all_methods();
std::string_view method_name(Method m);
Method method_from_name(std::string_view name);

struct StateAssignment {
  Method method = Method::residual_kmeans;
  int M = 0;
  std::uint64_t seed = 0;
  std::vector<int> z;      // n*L candidate states in 0..M-1
  Mat centroids;           // M x d in the clustering space (empty for label methods)
  Mat raw_centroids;       // M x d_model mean activation per cluster, always filled
  std::vector<int> alignment;       // cluster -> true state, only when M == K
  std::vector<char> empty_cluster;  // clusters absent from z

  std::string to_json() const;
  void save(const std::string& path) const;
};

struct ExtractInputs {
  const float* activations = nullptr;  // n*L x act_dim, required (raw centroids)
  int act_dim = 0;
  const double* beliefs = nullptr;  // n*L x K
  int K = 0;
  const int* tokens = nullptr;  // n*L
  int V = 0;
  const int* hidden = nullptr;  // n*L
  long n = 0;
  long L = 0;
};

// The six extractors: k-means over raw activations, over a PCA projection,
// over a random projection, over exact beliefs, the token identity baseline
// (M = V) and the true-state oracle (M = K). proj_dim is the PCA/random
// projection target dimensionality.
StateAssignment extract_states(Method method, const ExtractInputs& in, int M, std::uint64_t seed,
                               int proj_dim = 16);

// Optimal cluster -> state permutation maximizing label co-occurrence,
// computed on the M x K contingency matrix. Requires M == K; cluster-count
// sweeps with M != K skip alignment.
std::vector<int> hungarian_align(std::span<const int> z, std::span<const int> s_true, int M,
                                 int K);

// Maximum-total-value assignment on a square score matrix; returns col = perm[row].
std::vector<int> max_assignment(const Mat& score);

}  // namespace mct::extract
