#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

namespace mice {

// Gaussian random projection with entries N(0, 1/m); preserves expected
// squared norms of embedded vectors.
struct ProjectionMatrix {
  int n = 0;  // original feature dimension
  int m = 0;  // embedding dimension
  Eigen::MatrixXd a;  // n x m
  std::uint64_t seed = 0;
};

// Gaussian matrix without the reduction guard, for property checks that
// need m chosen from the point count alone.
ProjectionMatrix gaussian_projection(int n, int m, std::uint64_t seed);

// Projection for the memory pipeline; requires 1 <= m <= n.
ProjectionMatrix make_projection(int n, int m, std::uint64_t seed);

Eigen::VectorXd embed(const ProjectionMatrix& proj, const Eigen::VectorXd& x);

// Smallest embedding dimension for which the distance-distortion guarantee
// holds with eps over n_points points: 4 ln(n) / (eps^2/2 - eps^3/3).
int jl_min_dim(std::size_t n_points, double eps);

// Snapshot of the unsafe states seen in one iteration, stored as embeddings.
// Rebuilding replaces the previous contents entirely.
struct FlashbulbMemory {
  std::vector<Eigen::VectorXd> embeddings;
  int source_iteration = -1;
  std::optional<std::size_t> capacity;

  std::size_t size() const { return embeddings.size(); }
  bool empty() const { return embeddings.empty(); }
};

// Embeds the batch of unsafe state features and replaces the memory. When
// the batch exceeds cap, a uniform subsample (seeded, insertion order kept)
// is stored.
FlashbulbMemory rebuild_memory(const std::vector<Eigen::VectorXd>& unsafe_features,
                               const ProjectionMatrix& proj, int iteration,
                               std::optional<std::size_t> capacity = std::nullopt,
                               std::uint64_t seed = 0);

// Similarity kernel xi / (squared distance + xi); 1 at zero distance.
double kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double xi);

// sqrt of the summed kernel similarity to the k nearest stored embeddings
// (all of them when fewer than k are stored); 0 on empty memory.
double intrinsic_cost_raw(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding,
                          int k, double xi);

// Running mean statistics for intrinsic cost normalization.
struct IntrinsicNormalizer {
  std::uint64_t count = 0;
  double mean = 0.0;
  double second_moment = 0.0;

  void update(double x);
  double scale() const;  // max(mean, 1e-8)
};

// Raw intrinsic cost divided by the running mean of raw values; the
// normalizer absorbs the raw value before dividing.
double intrinsic_cost(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding, int k,
                      double xi, IntrinsicNormalizer& normalizer);

// Read-only variant: raw value divided by the current normalizer scale,
// without advancing it. Used to freeze per-iteration cost tables.
double intrinsic_cost_peek(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding,
                           int k, double xi, const IntrinsicNormalizer& normalizer);

nlohmann::json memory_snapshot(const FlashbulbMemory& mem, const ProjectionMatrix& proj);

}  // namespace mice
