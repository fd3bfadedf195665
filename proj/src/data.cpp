#include "bnnw/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "bnnw/error.hpp"
#include "bnnw/random.hpp"

namespace bnnw {

Dataset::Dataset(Eigen::VectorXd y, Eigen::VectorXd t, RowMatrix x, TreatmentKind kind)
    : y_(std::move(y)), t_(std::move(t)), x_(std::move(x)), kind_(kind) {
  require(y_.size() == t_.size() && y_.size() == x_.rows(), ErrorCode::DimensionMismatch,
          "outcome, treatment and covariate rows differ in length");
  require(y_.size() > 0, ErrorCode::EmptyData, "dataset has no observations");
  require(x_.cols() > 0, ErrorCode::DimensionMismatch, "dataset needs at least one covariate");
  require(y_.allFinite() && t_.allFinite() && x_.allFinite(), ErrorCode::DomainError,
          "dataset contains non-finite values");
  if (kind_ == TreatmentKind::Binary) {
    for (Index i = 0; i < t_.size(); ++i) {
      require(t_[i] == 0.0 || t_[i] == 1.0, ErrorCode::NonBinaryTreatment,
              "treatment " + format_real(t_[i]) + " at row " + std::to_string(i) +
                  " is not 0 or 1");
    }
  }
}

Dataset Dataset::subset(std::span<const Index> idx) const {
  Eigen::VectorXd y(idx.size()), t(idx.size());
  RowMatrix x(idx.size(), dim());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < size(), ErrorCode::InvalidArgument, "subset index out of range");
    y[r] = y_[idx[r]];
    t[r] = t_[idx[r]];
    x.row(r) = x_.row(idx[r]);
  }
  return Dataset(std::move(y), std::move(t), std::move(x), kind_);
}

bool Dataset::operator==(const Dataset& other) const {
  return kind_ == other.kind_ && x_.rows() == other.x_.rows() && x_.cols() == other.x_.cols() &&
         y_ == other.y_ && t_ == other.t_ && x_ == other.x_;
}

FoldPlan make_folds(Index N, int K, std::uint64_t seed) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be positive");
  require(N >= 2 * static_cast<Index>(K), ErrorCode::TooFewObservations,
          "N = " + std::to_string(N) + " is smaller than 2K = " + std::to_string(2 * K));
  IndexList perm(N);
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, "folds"));
  std::shuffle(perm.begin(), perm.end(), rng);

  FoldPlan plan;
  plan.K = K;
  plan.seed = seed;
  const Index base = N / K, extra = N % K;
  Index start = 0;
  for (int k = 0; k < K; ++k) {
    const Index len = base + (k < extra ? 1 : 0);
    IndexList fold(perm.begin() + start, perm.begin() + start + len);
    std::sort(fold.begin(), fold.end());
    plan.folds.push_back(std::move(fold));
    start += len;
  }
  for (int k = 0; k < K; ++k) {
    IndexList comp;
    comp.reserve(N - plan.folds[k].size());
    for (int j = 0; j < K; ++j)
      if (j != k) comp.insert(comp.end(), plan.folds[j].begin(), plan.folds[j].end());
    std::sort(comp.begin(), comp.end());

    IndexList shuffled = comp;
    Rng half_rng(derive_seed(seed, "halves", {static_cast<std::uint64_t>(k)}));
    std::shuffle(shuffled.begin(), shuffled.end(), half_rng);
    const auto mid = shuffled.begin() + static_cast<std::ptrdiff_t>((shuffled.size() + 1) / 2);
    IndexList first(shuffled.begin(), mid), second(mid, shuffled.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());

    plan.complements.push_back(std::move(comp));
    plan.first_half.push_back(std::move(first));
    plan.second_half.push_back(std::move(second));
  }
  return plan;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

namespace {

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  std::string_view s(cell);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    fail(ErrorCode::UnparseableCell, "row " + std::to_string(row) + ", column '" + column +
                                         "': cannot parse '" + cell + "'");
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptyData,
          path.string() + " has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(header[c], c);

  auto locate = [&](const std::string& name) {
    auto it = column.find(name);
    require(it != column.end(), ErrorCode::MissingColumn, "column '" + name + "' not in header");
    return it->second;
  };
  const std::size_t y_col = locate(schema.outcome);
  const std::size_t t_col = locate(schema.treatment);
  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (const auto& h : header)
      if (h != schema.outcome && h != schema.treatment) cov_names.push_back(h);
  }
  require(!cov_names.empty(), ErrorCode::MissingColumn, "no covariate columns");
  std::vector<std::size_t> x_cols;
  for (const auto& name : cov_names) x_cols.push_back(locate(name));

  std::vector<double> ys, ts, xs;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_csv_line(line);
    require(cells.size() == header.size(), ErrorCode::UnparseableCell,
            "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                " cells, header has " + std::to_string(header.size()));
    ys.push_back(parse_cell(cells[y_col], row, schema.outcome));
    ts.push_back(parse_cell(cells[t_col], row, schema.treatment));
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      xs.push_back(parse_cell(cells[x_cols[j]], row, cov_names[j]));
  }
  require(!ys.empty(), ErrorCode::EmptyData, path.string() + " has zero data rows");

  const Index n = static_cast<Index>(ys.size()), d = static_cast<Index>(x_cols.size());
  return Dataset(Eigen::Map<Eigen::VectorXd>(ys.data(), n), Eigen::Map<Eigen::VectorXd>(ts.data(), n),
                 Eigen::Map<RowMatrix>(xs.data(), n, d), schema.kind);
}

void write_csv(const std::filesystem::path& path, const Dataset& data, const std::string& outcome,
               const std::string& treatment, std::vector<std::string> covariate_names) {
  if (covariate_names.empty()) {
    for (Index j = 0; j < data.dim(); ++j) covariate_names.push_back("x" + std::to_string(j + 1));
  }
  require(static_cast<Index>(covariate_names.size()) == data.dim(), ErrorCode::DimensionMismatch,
          "covariate name count does not match dataset width");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << csv_field(outcome) << ',' << csv_field(treatment);
  for (const auto& name : covariate_names) out << ',' << csv_field(name);
  out << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out << format_real(data.y(i)) << ',' << format_real(data.t(i));
    for (Index j = 0; j < data.dim(); ++j) out << ',' << format_real(data.x()(i, j));
    out << '\n';
  }
}

}  // namespace bnnw
