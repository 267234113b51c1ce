#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>

#include "tgkd/tensor.hpp"

namespace tgkd {

/// Student and teacher probabilities plus the one-hot ground truth of one sample.
struct PredictionTriplet {
  Tensor student;       // S_i
  Tensor teacher;       // T_i
  Tensor ground_truth;  // G_i
  std::size_t class_index = 0;

  std::size_t classes() const { return ground_truth.size(); }

  /// Builds and validates a triplet from probability vectors and a label.
  static PredictionTriplet make(Tensor student, Tensor teacher, std::size_t label);
  /// Throws DataError if any invariant is broken.
  void validate() const;
};

struct EdgeVectors {
  Tensor student_to_truth;    // e_sg = G - S
  Tensor teacher_to_truth;    // e_tg = G - T
  Tensor student_to_teacher;  // e_st = T - S
};

EdgeVectors edge_vectors(const PredictionTriplet& t);

/// Mean teacher prediction per class. Immutable after construction.
class ClassAverageTable {
 public:
  /// `rows` is [C x C]; row c must be a probability vector.
  explicit ClassAverageTable(Tensor rows);

  std::size_t classes() const { return rows_.rows(); }
  std::span<const double> row(std::size_t c) const { return rows_.row(c); }
  Tensor row_tensor(std::size_t c) const;
  const Tensor& rows() const { return rows_; }

  /// Comma-separated, one row per class, 17 significant digits.
  void save(const std::filesystem::path& path) const;
  static ClassAverageTable load(const std::filesystem::path& path);

 private:
  Tensor rows_;
};

/// Group-by-class mean of teacher probabilities. Throws ConfigError naming
/// the first class that has no samples.
ClassAverageTable build_class_averages(const Tensor& teacher_probs,
                                       std::span<const std::size_t> labels, std::size_t classes);

/// Which geometric relations enter the fusion-network input.
///  vertices: [S | T | Tbar_c | G]                       (4C)
///  edges:    [e_sg | e_tg | e_st | e_tbar_g | e_s_tbar] (5C)
///  full:     edges followed by vertices                  (9C)
enum class RelationMode { vertices, edges, full };

std::string to_string(RelationMode m);
RelationMode parse_relation_mode(const std::string& s);
std::size_t feature_width(RelationMode m, std::size_t classes);

/// Concatenated relation vector for one sample. Edge slices use
/// e_tbar_g = G - Tbar_c and e_s_tbar = Tbar_c - S.
Tensor build_feature(const PredictionTriplet& t, const ClassAverageTable& table,
                     RelationMode mode = RelationMode::full);

/// Euclidean distance between student and teacher probability vectors.
double st_discrepancy(const Tensor& student, const Tensor& teacher);

}  // namespace tgkd
