#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bnnw {

using Index = Eigen::Index;
using IndexList = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class TreatmentKind { Binary, Continuous };

struct Observation {
  double y = 0.0;
  double t = 0.0;
  Eigen::VectorXd x;
};

/// Column-stored sample of (Y, T, X). Immutable after construction; the constructor enforces
/// finiteness, a fixed covariate width and {0,1} treatments for binary data.
class Dataset {
 public:
  Dataset(Eigen::VectorXd y, Eigen::VectorXd t, RowMatrix x, TreatmentKind kind);

  Index size() const { return y_.size(); }
  Index dim() const { return x_.cols(); }
  TreatmentKind treatment_kind() const { return kind_; }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& t() const { return t_; }
  const RowMatrix& x() const { return x_; }

  double y(Index i) const { return y_[i]; }
  double t(Index i) const { return t_[i]; }
  auto x(Index i) const { return x_.row(i); }

  Observation observation(Index i) const { return {y_[i], t_[i], x_.row(i).transpose()}; }

  /// Rows `idx` in the given order.
  Dataset subset(std::span<const Index> idx) const;

  bool operator==(const Dataset& other) const;

 private:
  Eigen::VectorXd y_;
  Eigen::VectorXd t_;
  RowMatrix x_;
  TreatmentKind kind_;
};

struct FoldPlan {
  int K = 0;
  std::uint64_t seed = 0;
  std::vector<IndexList> folds;        // I_k, sorted
  std::vector<IndexList> complements;  // I_{-k}, sorted
  std::vector<IndexList> first_half;   // I_{-k}^{(1)}, sorted
  std::vector<IndexList> second_half;  // I_{-k}^{(2)}, sorted
};

/// Shuffles 0..N-1 and cuts the permutation into K consecutive blocks; the first N mod K blocks
/// get one extra index. Each complement is split in two halves by a second seeded shuffle.
FoldPlan make_folds(Index N, int K, std::uint64_t seed);

struct CsvSchema {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> covariates;  // empty: every column except outcome and treatment
  TreatmentKind kind = TreatmentKind::Continuous;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes y, t, covariates with shortest round-trip real formatting.
void write_csv(const std::filesystem::path& path, const Dataset& data,
               const std::string& outcome = "y", const std::string& treatment = "t",
               std::vector<std::string> covariate_names = {});

/// Shortest decimal string that parses back to exactly `v`.
std::string format_real(double v);

/// Quotes a CSV field when it contains a delimiter, quote or newline.
std::string csv_field(const std::string& s);

/// Splits one CSV record, honoring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace bnnw
