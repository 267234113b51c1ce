#include "tgkd/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

namespace tgkd {

namespace {

constexpr double kProbTol = 1e-9;

bool is_probability_vector(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= kProbTol;
}

void append(std::vector<double>& out, std::span<const double> v) {
  out.insert(out.end(), v.begin(), v.end());
}

}  // namespace

PredictionTriplet PredictionTriplet::make(Tensor student, Tensor teacher, std::size_t label) {
  const std::size_t c = student.size();
  PredictionTriplet t{std::move(student), std::move(teacher), one_hot(label, c), label};
  t.validate();
  return t;
}

void PredictionTriplet::validate() const {
  const std::size_t c = ground_truth.size();
  if (student.size() != c || teacher.size() != c) {
    throw DataError("triplet vectors have mismatched lengths");
  }
  if (!is_probability_vector(student.values())) throw DataError("student row is not a probability vector");
  if (!is_probability_vector(teacher.values())) throw DataError("teacher row is not a probability vector");
  if (one_hot_index(ground_truth) != class_index) throw DataError("class index disagrees with ground truth");
}

EdgeVectors edge_vectors(const PredictionTriplet& t) {
  return {t.ground_truth - t.student, t.ground_truth - t.teacher, t.teacher - t.student};
}

ClassAverageTable::ClassAverageTable(Tensor rows) : rows_(std::move(rows)) {
  if (rows_.rank() != 2 || rows_.rows() != rows_.cols() || rows_.rows() < 2) {
    throw DataError("class-average table must be square with at least two classes");
  }
  for (std::size_t c = 0; c < rows_.rows(); ++c) {
    if (!is_probability_vector(rows_.row(c))) {
      throw DataError("class-average row " + std::to_string(c) + " is not a probability vector");
    }
  }
}

Tensor ClassAverageTable::row_tensor(std::size_t c) const { return tgkd::row_tensor(rows_, c); }

void ClassAverageTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (std::size_t c = 0; c < classes(); ++c) {
    auto r = row(c);
    for (std::size_t j = 0; j < r.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", r[j]);
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

ClassAverageTable ClassAverageTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("bad number '" + cell + "' in " + path.string());
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw DataError("ragged row " + std::to_string(rows) + " in " + path.string());
    ++rows;
  }
  return ClassAverageTable(Tensor({rows, cols}, std::move(values)));
}

ClassAverageTable build_class_averages(const Tensor& teacher_probs,
                                       std::span<const std::size_t> labels, std::size_t classes) {
  if (teacher_probs.rank() != 2 || teacher_probs.rows() != labels.size() ||
      teacher_probs.cols() != classes) {
    throw std::invalid_argument("build_class_averages: teacher_probs must be [N x C] with N labels");
  }
  Tensor sums = Tensor::matrix(classes, classes);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DataError("label out of range at sample " + std::to_string(i));
    auto src = teacher_probs.row(i);
    auto dst = sums.row(labels[i]);
    for (std::size_t j = 0; j < classes; ++j) dst[j] += src[j];
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) {
      throw ConfigError("class " + std::to_string(c) + " has no training samples");
    }
    for (double& v : sums.row(c)) v /= static_cast<double>(counts[c]);
  }
  return ClassAverageTable(std::move(sums));
}

std::string to_string(RelationMode m) {
  switch (m) {
    case RelationMode::vertices: return "R1";
    case RelationMode::edges: return "R2";
    case RelationMode::full: return "R3";
  }
  return "?";
}

RelationMode parse_relation_mode(const std::string& s) {
  if (s == "R1" || s == "vertices") return RelationMode::vertices;
  if (s == "R2" || s == "edges") return RelationMode::edges;
  if (s == "R3" || s == "full") return RelationMode::full;
  throw ConfigError("unknown relation mode '" + s + "' (expected R1, R2 or R3)");
}

std::size_t feature_width(RelationMode m, std::size_t classes) {
  switch (m) {
    case RelationMode::vertices: return 4 * classes;
    case RelationMode::edges: return 5 * classes;
    case RelationMode::full: return 9 * classes;
  }
  return 0;
}

Tensor build_feature(const PredictionTriplet& t, const ClassAverageTable& table, RelationMode mode) {
  const std::size_t c = t.classes();
  if (table.classes() != c) throw std::invalid_argument("build_feature: class count mismatch");
  const Tensor tbar = table.row_tensor(t.class_index);

  std::vector<double> out;
  out.reserve(feature_width(mode, c));
  if (mode != RelationMode::vertices) {
    const EdgeVectors e = edge_vectors(t);
    append(out, e.student_to_truth.values());
    append(out, e.teacher_to_truth.values());
    append(out, e.student_to_teacher.values());
    append(out, (t.ground_truth - tbar).values());
    append(out, (tbar - t.student).values());
  }
  if (mode != RelationMode::edges) {
    append(out, t.student.values());
    append(out, t.teacher.values());
    append(out, tbar.values());
    append(out, t.ground_truth.values());
  }
  return Tensor::vector(std::move(out));
}

double st_discrepancy(const Tensor& student, const Tensor& teacher) {
  if (student.size() != teacher.size()) throw std::invalid_argument("st_discrepancy: length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < student.size(); ++j) {
    const double d = student[j] - teacher[j];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace tgkd
