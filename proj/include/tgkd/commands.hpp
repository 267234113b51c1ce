#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tgkd/bilevel.hpp"
#include "tgkd/config.hpp"
#include "tgkd/data.hpp"
#include "tgkd/eval.hpp"
#include "tgkd/selfcheck.hpp"

namespace tgkd {

/// Builds the splits a run uses: source data, optional normalization,
/// outlier injection, stratified split and optional training-set oversampling.
/// Deterministic in the config's seed.
DatasetSplits prepare_data(const RunConfig& cfg);

/// Training rows the teacher sees (injected outliers dropped unless enabled).
Dataset teacher_training_set(const RunConfig& cfg, const DatasetSplits& splits);

ModelParams make_teacher(const RunConfig& cfg, std::size_t dim, std::size_t classes);
ModelParams make_student(const RunConfig& cfg, std::size_t dim, std::size_t classes);
RatioPolicy make_policy(const RunConfig& cfg, const DatasetSplits& splits, const ModelParams& teacher);
TrainSettings make_train_settings(const RunConfig& cfg);

struct TeacherRun {
  ModelParams teacher;
  MetricReport train;
  MetricReport val;
  MetricReport test;
};

struct DistillRun {
  TrainResult result;
  MetricReport val;
  MetricReport test;
};

TeacherRun run_train_teacher(const RunConfig& cfg, const DatasetSplits& splits);
DistillRun run_distill(const RunConfig& cfg, const DatasetSplits& splits, const ModelParams& teacher);

// Commands write their artifacts under cfg.output_dir (analyze: cfg.report_dir)
// and a short progress log to `log`.
void cmd_train_teacher(const RunConfig& cfg, std::ostream& log);
void cmd_distill(const RunConfig& cfg, std::ostream& log);
void cmd_analyze(const RunConfig& cfg, std::ostream& log);

/// Runs the oracle suites, prints one line per check; true if all pass.
bool cmd_selfcheck(std::ostream& log);

// Dump formats shared by distill and analyze.
void write_alpha_dump(const std::filesystem::path& path, const std::vector<AlphaRecord>& records);
std::vector<AlphaRecord> read_alpha_dump(const std::filesystem::path& path);
void write_triplet_dump(const std::filesystem::path& path, const std::vector<SampleSnapshot>& snaps);

struct TripletRow {
  std::size_t id = 0;
  PredictionTriplet triplet;
};
std::vector<TripletRow> read_triplet_dump(const std::filesystem::path& path);

}  // namespace tgkd
