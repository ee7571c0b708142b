#include "mice/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mice/rng.hpp"

namespace mice {

ProjectionMatrix gaussian_projection(int n, int m, std::uint64_t seed) {
  if (n < 1 || m < 1) throw std::invalid_argument("projection dimensions must be >= 1");
  ProjectionMatrix proj;
  proj.n = n;
  proj.m = m;
  proj.seed = seed;
  proj.a.resize(n, m);
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(m));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      proj.a(i, j) = stddev * rng.normal();
    }
  }
  return proj;
}

ProjectionMatrix make_projection(int n, int m, std::uint64_t seed) {
  if (m > n) {
    throw std::invalid_argument("embedding dimension m=" + std::to_string(m) +
                                " must not exceed feature dimension n=" + std::to_string(n));
  }
  return gaussian_projection(n, m, seed);
}

Eigen::VectorXd embed(const ProjectionMatrix& proj, const Eigen::VectorXd& x) {
  if (x.size() != proj.n) {
    throw std::invalid_argument("embed: feature vector has dimension " +
                                std::to_string(x.size()) + ", projection expects " +
                                std::to_string(proj.n));
  }
  return proj.a.transpose() * x;
}

int jl_min_dim(std::size_t n_points, double eps) {
  if (n_points < 2 || eps <= 0.0 || eps >= 1.0) {
    throw std::invalid_argument("jl_min_dim: need n_points >= 2 and eps in (0, 1)");
  }
  const double denom = eps * eps / 2.0 - eps * eps * eps / 3.0;
  return static_cast<int>(std::ceil(4.0 * std::log(static_cast<double>(n_points)) / denom));
}

FlashbulbMemory rebuild_memory(const std::vector<Eigen::VectorXd>& unsafe_features,
                               const ProjectionMatrix& proj, int iteration,
                               std::optional<std::size_t> capacity, std::uint64_t seed) {
  FlashbulbMemory mem;
  mem.source_iteration = iteration;
  mem.capacity = capacity;

  std::vector<std::size_t> keep(unsafe_features.size());
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (capacity && unsafe_features.size() > *capacity) {
    // Partial Fisher-Yates picks a uniform subset; re-sorting keeps the
    // original insertion order inside the memory.
    Rng rng(derive_seed(seed, 0xFBu, static_cast<std::uint64_t>(iteration)));
    for (std::size_t i = 0; i < *capacity; ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(rng.next_u64() % (keep.size() - i));
      std::swap(keep[i], keep[j]);
    }
    keep.resize(*capacity);
    std::sort(keep.begin(), keep.end());
  }

  mem.embeddings.reserve(keep.size());
  for (std::size_t idx : keep) {
    mem.embeddings.push_back(embed(proj, unsafe_features[idx]));
  }
  return mem;
}

double kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double xi) {
  if (xi <= 0.0) throw std::invalid_argument("kernel: xi must be > 0");
  if (x.size() != y.size()) throw std::invalid_argument("kernel: dimension mismatch");
  const double sq = (x - y).squaredNorm();
  return xi / (sq + xi);
}

double intrinsic_cost_raw(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding,
                          int k, double xi) {
  if (k < 1) throw std::invalid_argument("intrinsic_cost_raw: k must be >= 1");
  if (xi <= 0.0) throw std::invalid_argument("intrinsic_cost_raw: xi must be > 0");
  if (mem.empty()) return 0.0;

  std::vector<std::pair<double, std::size_t>> by_dist;
  by_dist.reserve(mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    if (mem.embeddings[i].size() != query_embedding.size()) {
      throw std::invalid_argument("intrinsic_cost_raw: embedding dimension mismatch");
    }
    by_dist.emplace_back((mem.embeddings[i] - query_embedding).squaredNorm(), i);
  }
  const std::size_t take = std::min(static_cast<std::size_t>(k), by_dist.size());
  // Ties broken by insertion index so the neighbor set is deterministic.
  std::partial_sort(by_dist.begin(), by_dist.begin() + static_cast<std::ptrdiff_t>(take),
                    by_dist.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    acc += xi / (by_dist[i].first + xi);
  }
  return std::sqrt(acc);
}

void IntrinsicNormalizer::update(double x) {
  count += 1;
  const double delta = x - mean;
  mean += delta / static_cast<double>(count);
  second_moment += delta * (x - mean);
}

double IntrinsicNormalizer::scale() const { return std::max(mean, 1e-8); }

double intrinsic_cost(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding, int k,
                      double xi, IntrinsicNormalizer& normalizer) {
  const double raw = intrinsic_cost_raw(mem, query_embedding, k, xi);
  normalizer.update(raw);
  if (raw == 0.0) return 0.0;
  return raw / normalizer.scale();
}

double intrinsic_cost_peek(const FlashbulbMemory& mem, const Eigen::VectorXd& query_embedding,
                           int k, double xi, const IntrinsicNormalizer& normalizer) {
  const double raw = intrinsic_cost_raw(mem, query_embedding, k, xi);
  if (raw == 0.0) return 0.0;
  return raw / normalizer.scale();
}

nlohmann::json memory_snapshot(const FlashbulbMemory& mem, const ProjectionMatrix& proj) {
  nlohmann::json j;
  j["projection_seed"] = proj.seed;
  j["feature_dim"] = proj.n;
  j["embedding_dim"] = proj.m;
  j["source_iteration"] = mem.source_iteration;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : mem.embeddings) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < e.size(); ++i) row.push_back(e(i));
    rows.push_back(row);
  }
  j["embeddings"] = rows;
  return j;
}

}  // namespace mice
