#include "repcl/metrics.hpp"

#include "repcl/errors.hpp"

#include <algorithm>
#include <sstream>

namespace repcl {

AccuracyMatrix::AccuracyMatrix(int num_tasks) : n_(num_tasks) {
  if (num_tasks < 0) throw InputError("negative task count");
  cells_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_ + 1) / 2);
}

std::size_t AccuracyMatrix::slot(int j, int i) const {
  if (j < 1 || j > n_ || i < 1 || i > j) throw InputError("accuracy matrix index out of range");
  return static_cast<std::size_t>(j - 1) * static_cast<std::size_t>(j) / 2 + static_cast<std::size_t>(i - 1);
}

void AccuracyMatrix::set(int j, int i, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw InputError("accuracy must lie in [0, 1]");
  cells_[slot(j, i)] = value;
}

double AccuracyMatrix::at(int j, int i) const {
  const auto& c = cells_[slot(j, i)];
  if (!c) throw InputError("accuracy matrix entry not filled");
  return *c;
}

bool AccuracyMatrix::has(int j, int i) const { return cells_[slot(j, i)].has_value(); }

int AccuracyMatrix::rows_filled() const {
  for (int j = 1; j <= n_; ++j)
    for (int i = 1; i <= j; ++i)
      if (!has(j, i)) return j - 1;
  return n_;
}

nlohmann::json AccuracyMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int j = 1; j <= rows_filled(); ++j) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 1; i <= j; ++i) row.push_back(at(j, i));
    rows.push_back(row);
  }
  return rows;
}

AccuracyMatrix AccuracyMatrix::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("accuracy matrix must be an array of rows");
  AccuracyMatrix a(static_cast<int>(j.size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != r + 1) throw ValidationError("accuracy matrix rows must be lower-triangular");
    for (std::size_t c = 0; c <= r; ++c) a.set(static_cast<int>(r + 1), static_cast<int>(c + 1), j[r][c].get<double>());
  }
  return a;
}

std::string AccuracyMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "stage";
  for (int i = 1; i <= n_; ++i) out << ',' << i;
  out << '\n';
  for (int j = 1; j <= n_; ++j) {
    out << j;
    for (int i = 1; i <= n_; ++i) {
      out << ',';
      if (i <= j && has(j, i)) out << at(j, i);
    }
    out << '\n';
  }
  return out.str();
}

double accuracy(const Predictor& predict, std::span<const Instance> xs) {
  if (xs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const Instance& x : xs) correct += predict(x) == x.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(xs.size());
}

double accuracy_all_seen(const Predictor& predict, const TaskStream& stream, int upto, Averaging avg) {
  if (upto < 1 || upto > static_cast<int>(stream.tasks.size())) throw InputError("task index out of range");
  std::size_t correct = 0, total = 0;
  double macro = 0.0;
  for (int t = 0; t < upto; ++t) {
    const auto& test = stream.tasks[static_cast<std::size_t>(t)].test;
    std::size_t c = 0;
    for (const Instance& x : test) c += predict(x) == x.label ? 1 : 0;
    correct += c;
    total += test.size();
    macro += test.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(test.size());
  }
  if (avg == Averaging::Macro) return macro / upto;
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::optional<double> forgetting_rate(const AccuracyMatrix& a, int k) {
  if (k < 2) return std::nullopt;
  if (k > a.num_tasks()) throw InputError("forgetting rate stage beyond the matrix");
  double sum = 0.0;
  for (int i = 1; i < k; ++i) {
    double best = a.at(i, i);
    for (int l = i + 1; l < k; ++l) best = std::max(best, a.at(l, i));
    sum += best - a.at(k, i);
  }
  return sum / static_cast<double>(k - 1);
}

}  // namespace repcl
