#pragma once

// Time grids, Brownian path batches for the two drivers (W forward, B
// backward) and Euler-Maruyama forward diffusions.

#include "bdsde/csv.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/rng.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace bdsde {

struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  std::size_t n_steps = 1;

  double dt() const { return (T - t0) / static_cast<double>(n_steps); }
  std::size_t nodes() const { return n_steps + 1; }
  double time(std::size_t i) const { return i == n_steps ? T : t0 + static_cast<double>(i) * dt(); }
  bool operator==(const TimeGrid&) const = default;
};

inline TimeGrid make_grid(double t0, double T, std::size_t n_steps) {
  require(std::isfinite(t0) && std::isfinite(T), "make_grid: non-finite endpoint");
  require(T > t0, "make_grid: horizon must exceed start time");
  require(n_steps >= 1, "make_grid: n_steps must be positive");
  return TimeGrid{t0, T, n_steps};
}

/// Dense [path][node][rows x cols] array, each node block column-major.
class PathTensor {
 public:
  PathTensor() = default;
  PathTensor(std::size_t paths, std::size_t nodes, int rows, int cols = 1, double fill = 0.0)
      : paths_(paths), nodes_(nodes), rows_(rows), cols_(cols),
        data_(paths * nodes * static_cast<std::size_t>(rows * cols), fill) {
    require(rows >= 1 && cols >= 1, "PathTensor: empty block shape");
  }

  std::size_t paths() const { return paths_; }
  std::size_t nodes() const { return nodes_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t block() const { return static_cast<std::size_t>(rows_ * cols_); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const PathTensor& o) const {
    return paths_ == o.paths_ && nodes_ == o.nodes_ && rows_ == o.rows_ && cols_ == o.cols_;
  }

  Eigen::Map<Eigen::MatrixXd> operator()(std::size_t path, std::size_t node) {
    return Eigen::Map<Eigen::MatrixXd>(ptr(path, node), rows_, cols_);
  }
  Eigen::Map<const Eigen::MatrixXd> operator()(std::size_t path, std::size_t node) const {
    return Eigen::Map<const Eigen::MatrixXd>(ptr(path, node), rows_, cols_);
  }

  double& at(std::size_t path, std::size_t node, int r, int c = 0) { return ptr(path, node)[r + c * rows_]; }
  double at(std::size_t path, std::size_t node, int r, int c = 0) const { return ptr(path, node)[r + c * rows_]; }

  Vec vec(std::size_t path, std::size_t node) const { return Eigen::Map<const Eigen::VectorXd>(ptr(path, node), rows_ * cols_); }
  Mat mat(std::size_t path, std::size_t node) const { return (*this)(path, node); }

  double* ptr(std::size_t path, std::size_t node) { return data_.data() + (path * nodes_ + node) * block(); }
  const double* ptr(std::size_t path, std::size_t node) const {
    return data_.data() + (path * nodes_ + node) * block();
  }

  /// All nodes of one path, contiguous.
  std::span<const double> path_span(std::size_t path) const {
    return {data_.data() + path * nodes_ * block(), nodes_ * block()};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const PathTensor&) const = default;

 private:
  std::size_t paths_ = 0;
  std::size_t nodes_ = 0;
  int rows_ = 1;
  int cols_ = 1;
  std::vector<double> data_;
};

/// Matched batches of the forward driver W (d-dim) and the backward driver B
/// (l-dim), stored as cumulated path values starting from zero. Paths in the
/// same B-group of size b_group_size share one B path.
struct PathBundle {
  TimeGrid grid;
  std::size_t n_paths = 0;
  int d = 1;
  int ell = 1;
  std::size_t b_group_size = 1;
  std::uint64_t seed = 0;
  PathTensor W;
  PathTensor B;

  std::size_t n_groups() const { return n_paths / b_group_size; }
  std::size_t group_of(std::size_t path) const { return path / b_group_size; }

  Vec dW(std::size_t path, std::size_t i) const { return W.vec(path, i + 1) - W.vec(path, i); }
  Vec dB(std::size_t path, std::size_t i) const { return B.vec(path, i + 1) - B.vec(path, i); }
};

namespace detail {
inline constexpr std::uint32_t kDriverW = 0;
inline constexpr std::uint32_t kDriverB = 1;

/// Fills one cumulated Brownian path. Normals keyed by (stream, step, driver,
/// component pair) so each increment is independent of batch layout.
inline void fill_brownian(double* out, std::size_t n_steps, int dim, double sqrt_dt, std::uint64_t seed,
                          std::uint64_t stream, std::uint32_t driver) {
  for (int c = 0; c < dim; ++c) out[c] = 0.0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    for (int c = 0; c < dim; c += 2) {
      const auto z = normal_pair(seed, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(i),
                                 (driver << 16) | static_cast<std::uint32_t>(c / 2),
                                 static_cast<std::uint32_t>(stream >> 32));
      out[(i + 1) * dim + c] = out[i * dim + c] + sqrt_dt * z[0];
      if (c + 1 < dim) out[(i + 1) * dim + c + 1] = out[i * dim + c + 1] + sqrt_dt * z[1];
    }
  }
}
}  // namespace detail

inline PathBundle sample_bundle(const TimeGrid& grid, int d, int ell, std::size_t n_paths, std::uint64_t seed,
                                std::size_t b_group_size = 1) {
  require_dim(d, "sample_bundle: d");
  require_dim(ell, "sample_bundle: ell");
  require(n_paths >= 1, "sample_bundle: n_paths must be positive");
  require(b_group_size >= 1 && n_paths % b_group_size == 0,
          "sample_bundle: n_paths must be a positive multiple of b_group_size");

  PathBundle bundle{grid, n_paths, d, ell, b_group_size, seed,
                    PathTensor(n_paths, grid.nodes(), d), PathTensor(n_paths, grid.nodes(), ell)};
  const double sqrt_dt = std::sqrt(grid.dt());
  parallel_for(n_paths, [&](std::size_t k) {
    detail::fill_brownian(bundle.W.ptr(k, 0), grid.n_steps, d, sqrt_dt, seed, k, detail::kDriverW);
    if (k % b_group_size == 0) {
      detail::fill_brownian(bundle.B.ptr(k, 0), grid.n_steps, ell, sqrt_dt, seed, k / b_group_size,
                            detail::kDriverB);
    }
  });
  if (b_group_size > 1) {
    parallel_for(n_paths, [&](std::size_t k) {
      if (k % b_group_size == 0) return;
      const std::size_t lead = k - k % b_group_size;
      std::copy_n(bundle.B.ptr(lead, 0), grid.nodes() * ell, bundle.B.ptr(k, 0));
    });
  }
  return bundle;
}

/// Keeps every second node of a cumulated path, i.e. sums adjacent increments.
inline PathTensor coarsen(const PathTensor& path) {
  require(path.nodes() >= 3 && (path.nodes() - 1) % 2 == 0, "coarsen: need an even number of steps");
  const std::size_t coarse_nodes = (path.nodes() - 1) / 2 + 1;
  PathTensor out(path.paths(), coarse_nodes, path.rows(), path.cols());
  for (std::size_t k = 0; k < path.paths(); ++k)
    for (std::size_t i = 0; i < coarse_nodes; ++i)
      std::copy_n(path.ptr(k, 2 * i), path.block(), out.ptr(k, i));
  return out;
}

inline PathBundle coarsen(const PathBundle& fine) {
  PathBundle out = fine;
  out.grid = make_grid(fine.grid.t0, fine.grid.T, fine.grid.n_steps / 2);
  out.W = coarsen(fine.W);
  out.B = coarsen(fine.B);
  return out;
}

/// Raw increments [path][n_steps][rows x cols] of a cumulated path.
inline PathTensor increments(const PathTensor& path) {
  require(path.nodes() >= 2, "increments: need at least two nodes");
  PathTensor out(path.paths(), path.nodes() - 1, path.rows(), path.cols());
  for (std::size_t k = 0; k < path.paths(); ++k)
    for (std::size_t i = 0; i + 1 < path.nodes(); ++i) {
      const double* a = path.ptr(k, i);
      const double* b = path.ptr(k, i + 1);
      double* o = out.ptr(k, i);
      for (std::size_t j = 0; j < path.block(); ++j) o[j] = b[j] - a[j];
    }
  return out;
}

/// Node i -> node (nodes-1-i). Pure index permutation, no arithmetic.
inline PathTensor reverse_time(const PathTensor& path) {
  PathTensor out(path.paths(), path.nodes(), path.rows(), path.cols());
  const std::size_t last = path.nodes() - 1;
  for (std::size_t k = 0; k < path.paths(); ++k)
    for (std::size_t i = 0; i < path.nodes(); ++i) std::copy_n(path.ptr(k, i), path.block(), out.ptr(k, last - i));
  return out;
}

struct StatePath {
  TimeGrid grid;
  PathTensor X;
  std::vector<std::uint8_t> failed;  // 1 when the path hit a non-finite state

  std::size_t failed_count() const {
    std::size_t n = 0;
    for (auto f : failed) n += f;
    return n;
  }
};

/// Explicit Euler-Maruyama: X_{i+1} = X_i + b(X_i) dt + sigma(X_i) dW_i.
/// A path whose state leaves the finite range is flagged and padded with NaN.
template <class Drift, class Diffusion>
StatePath euler_forward(const TimeGrid& grid, Drift&& b, Diffusion&& sigma, const Vec& x0, const PathBundle& bundle) {
  require(bundle.grid == grid, "euler_forward: bundle grid mismatch");
  const int m = static_cast<int>(x0.size());
  require_dim(m, "euler_forward: state dimension");
  StatePath out{grid, PathTensor(bundle.n_paths, grid.nodes(), m), std::vector<std::uint8_t>(bundle.n_paths, 0)};
  const double dt = grid.dt();
  parallel_for(bundle.n_paths, [&](std::size_t k) {
    Vec x = x0;
    out.X(k, 0) = x;
    for (std::size_t i = 0; i < grid.n_steps; ++i) {
      const Vec drift = b(x);
      const Mat diff = sigma(x);
      require(drift.size() == m && diff.rows() == m && diff.cols() == bundle.d,
              "euler_forward: coefficient shape mismatch");
      x = x + drift * dt + diff * bundle.dW(k, i);
      if (!x.allFinite()) {
        out.failed[k] = 1;
        for (std::size_t j = i + 1; j < grid.nodes(); ++j) out.X(k, j).setConstant(std::nan(""));
        return;
      }
      out.X(k, i + 1) = x;
    }
  });
  return out;
}

/// Columnar export: path_id,node_index,t,W1..Wd,B1..Bl
inline void write_bundle_csv(std::ostream& os, const PathBundle& bundle, std::size_t max_paths = SIZE_MAX) {
  std::vector<std::string> header{"path_id", "node_index", "t"};
  for (int c = 0; c < bundle.d; ++c) header.push_back("W" + std::to_string(c + 1));
  for (int c = 0; c < bundle.ell; ++c) header.push_back("B" + std::to_string(c + 1));
  csv::Writer w(os, header);
  const std::size_t n = std::min(max_paths, bundle.n_paths);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < bundle.grid.nodes(); ++i) {
      w.cell(k).cell(i).cell(bundle.grid.time(i));
      for (int c = 0; c < bundle.d; ++c) w.cell(bundle.W.at(k, i, c));
      for (int c = 0; c < bundle.ell; ++c) w.cell(bundle.B.at(k, i, c));
      w.end_row();
    }
}

}  // namespace bdsde
