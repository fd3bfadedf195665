#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "bnnw/data.hpp"
#include "bnnw/random.hpp"

namespace bnnw::testutil {

inline Eigen::VectorXd uniform_vector(Index n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Eigen::MatrixXd normal_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = z(rng);
  return m;
}

/// Binary-treatment sample with uniform covariates and a noisy linear outcome.
inline Dataset random_binary(Index n, Index d, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(n), t(n);
  RowMatrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = u(rng);
    t[i] = i < 2 ? static_cast<double>(i) : (u(rng) < 0.5 ? 1.0 : 0.0);
    y[i] = 1.0 + t[i] + x(i, 0) + 0.3 * z(rng);
  }
  return Dataset(y, t, x, TreatmentKind::Binary);
}

inline Dataset random_continuous(Index n, Index d, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(n), t(n);
  RowMatrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = u(rng);
    t[i] = u(rng);
    y[i] = t[i] * t[i] + x(i, 0) + 0.3 * z(rng);
  }
  return Dataset(y, t, x, TreatmentKind::Continuous);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("bnnw_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace bnnw::testutil
