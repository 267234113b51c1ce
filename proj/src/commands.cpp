#include "tgkd/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

namespace tgkd {

namespace fs = std::filesystem;

namespace {

std::uint64_t sub_seed(std::uint64_t root, const char* name) { return Rng::stream(root, name).next_u64(); }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "absent"; }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_real(const std::string& s, const fs::path& file, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw DataError(file.string() + " row " + std::to_string(row) + ": bad number '" + s + "'");
}

std::size_t parse_count(const std::string& s, const fs::path& file, std::size_t row) {
  const double v = parse_real(s, file, row);
  if (v < 0.0 || v != std::floor(v)) {
    throw DataError(file.string() + " row " + std::to_string(row) + ": expected an integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

// Reads a header plus rows; every row must match the header arity.
std::vector<std::vector<std::string>> read_table(const fs::path& path, std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  header = split_csv(line);
  std::vector<std::vector<std::string>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_metrics(const fs::path& path, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ofstream out = open_out(path);
  out << "split,acc,macro_auc,nll,n\n";
  for (const auto& [name, m] : rows) {
    out << name << ',' << num(m.acc) << ',' << num(m.macro_auc) << ',' << num(m.nll) << ',' << m.n << '\n';
  }
}

MetricReport evaluate_on(const ModelParams& params, const Dataset& data) {
  return evaluate(predict_probs(params, data), data.labels);
}

void print_config(const RunConfig& cfg, std::ostream& log) {
  log << "# resolved configuration\n" << cfg.raw.render() << "# end configuration\n";
}

void print_metrics(std::ostream& log, const std::string& who, const std::string& split, const MetricReport& m) {
  log << who << ' ' << split << ": acc=" << num(m.acc) << " auc=" << num(m.macro_auc) << " nll=" << num(m.nll)
      << " n=" << m.n << '\n';
}

}  // namespace

DatasetSplits prepare_data(const RunConfig& cfg) {
  Dataset full;
  if (cfg.data_source == "synthetic") {
    ClusterSpec spec;
    spec.classes = cfg.classes;
    spec.per_class = cfg.per_class;
    spec.dim = cfg.dim;
    spec.spread = cfg.spread;
    spec.label_noise = cfg.label_noise;
    spec.imbalance_ratio = cfg.imbalance_ratio;
    spec.seed = sub_seed(cfg.seed, "data");
    full = synth_gaussian_clusters(spec);
    if (cfg.normalize) normalize_min_max(full);
  } else {
    full = load_delimited(cfg.data_path, cfg.label_column, cfg.normalize);
  }

  std::size_t outliers = 0;
  if (cfg.outlier_count >= 0) {
    outliers = static_cast<std::size_t>(cfg.outlier_count);
  } else {
    // Fraction of the expected clean training-set size.
    double train_n = 0.0;
    for (std::size_t n : full.class_counts()) {
      train_n += static_cast<double>(std::llround(static_cast<double>(n) * cfg.train_frac));
    }
    outliers = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * train_n));
  }
  if (outliers > 0) {
    if (!full.image_mode) throw ConfigError("outlier injection needs normalize = true");
    full = inject_gaussian_outliers(full, outliers, sub_seed(cfg.seed, "outliers"));
  }

  DatasetSplits splits = split(full, cfg.train_frac, cfg.val_frac, sub_seed(cfg.seed, "split"));
  if (cfg.oversample) {
    splits.train = oversample_minority(splits.train, sub_seed(cfg.seed, "oversample"), splits.max_id() + 1);
  }
  return splits;
}

Dataset teacher_training_set(const RunConfig& cfg, const DatasetSplits& splits) {
  if (cfg.teacher_on_outliers) return splits.train;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < splits.train.size(); ++i) {
    if (!splits.train.is_outlier[i]) keep.push_back(i);
  }
  return splits.train.subset(keep);
}

ModelParams make_teacher(const RunConfig& cfg, std::size_t dim, std::size_t classes) {
  std::vector<std::size_t> widths{dim};
  widths.insert(widths.end(), cfg.teacher_hidden.begin(), cfg.teacher_hidden.end());
  widths.push_back(classes);
  Rng rng = Rng::stream(cfg.seed, "teacher_init");
  return init_mlp(widths, Activation::relu, Activation::identity, rng);
}

ModelParams make_student(const RunConfig& cfg, std::size_t dim, std::size_t classes) {
  std::vector<std::size_t> widths{dim};
  widths.insert(widths.end(), cfg.student_hidden.begin(), cfg.student_hidden.end());
  widths.push_back(classes);
  Rng rng = Rng::stream(cfg.seed, "init");
  return init_mlp(widths, Activation::relu, Activation::identity, rng);
}

RatioPolicy make_policy(const RunConfig& cfg, const DatasetSplits& splits, const ModelParams& teacher) {
  switch (cfg.policy) {
    case PolicyKind::fixed:
      return RatioPolicy::fixed(cfg.alpha);
    case PolicyKind::annealed:
      return RatioPolicy::annealed(std::max<std::size_t>(
          1, cfg.epochs * batches_per_epoch(splits.train.size(), cfg.batch_size)));
    case PolicyKind::class_wise:
      return RatioPolicy::class_wise(per_class_accuracy(teacher, teacher_training_set(cfg, splits)));
    case PolicyKind::wls:
      return RatioPolicy::wls(cfg.wls_gain);
    case PolicyKind::tgeo: {
      const std::size_t width = feature_width(cfg.relation, splits.train.classes);
      Rng rng = Rng::stream(cfg.seed, "fusion_init");
      ModelParams omega = make_fusion_net(width, cfg.fusion_hidden, cfg.fusion_depth, rng);
      if (cfg.fusion_zero_init) omega = omega.zeros_like();
      return RatioPolicy::tgeo(std::move(omega), cfg.relation);
    }
  }
  throw ConfigError("unknown policy");
}

TrainSettings make_train_settings(const RunConfig& cfg) {
  TrainSettings s;
  s.epochs = cfg.epochs;
  s.batch_size = cfg.batch_size;
  s.patience = cfg.patience;
  s.inner.tau = cfg.tau;
  s.inner.stop_gradient = cfg.stop_gradient;
  s.inner_opt = cfg.inner_opt;
  s.outer_opt = cfg.outer_opt;
  s.mode = cfg.hypergrad;
  s.fd_scale = cfg.fd_scale;
  s.alpha_dump_interval = cfg.alpha_dump_interval;
  s.seed = cfg.seed;
  return s;
}

TeacherRun run_train_teacher(const RunConfig& cfg, const DatasetSplits& splits) {
  const Dataset train = teacher_training_set(cfg, splits);
  ModelParams teacher = make_teacher(cfg, train.dim(), train.classes);
  teacher = train_supervised(std::move(teacher), train, cfg.teacher_opt, cfg.teacher_epochs, cfg.batch_size,
                             sub_seed(cfg.seed, "teacher_batching"));
  TeacherRun run{std::move(teacher), {}, {}, {}};
  run.train = evaluate_on(run.teacher, train);
  run.val = evaluate_on(run.teacher, splits.val);
  run.test = evaluate_on(run.teacher, splits.test);
  return run;
}

DistillRun run_distill(const RunConfig& cfg, const DatasetSplits& splits, const ModelParams& teacher) {
  if (teacher.in_width() != splits.train.dim() || teacher.out_width() != splits.train.classes) {
    throw DataError("teacher expects " + std::to_string(teacher.in_width()) + " features and " +
                    std::to_string(teacher.out_width()) + " classes; data has " +
                    std::to_string(splits.train.dim()) + " and " + std::to_string(splits.train.classes));
  }
  ModelParams student = make_student(cfg, splits.train.dim(), splits.train.classes);
  RatioPolicy policy = make_policy(cfg, splits, teacher);
  DistillRun run{train(make_train_settings(cfg), splits, teacher, std::move(student), std::move(policy)), {}, {}};
  run.val = evaluate_on(run.result.student, splits.val);
  run.test = evaluate_on(run.result.student, splits.test);
  return run;
}

void cmd_train_teacher(const RunConfig& cfg, std::ostream& log) {
  print_config(cfg, log);
  const DatasetSplits splits = prepare_data(cfg);
  log << "data: train=" << splits.train.size() << " val=" << splits.val.size() << " test=" << splits.test.size()
      << " classes=" << splits.train.classes << " dim=" << splits.train.dim() << '\n';
  const TeacherRun run = run_train_teacher(cfg, splits);

  fs::create_directories(cfg.output_dir);
  save_params(cfg.output_dir / "teacher.bin", run.teacher);
  write_metrics(cfg.output_dir / "teacher_metrics.csv", {{"train", run.train}, {"val", run.val}, {"test", run.test}});
  const DistillSplit attached = attach_teacher(splits.train, run.teacher);
  build_class_averages(attached.teacher_probs, splits.train.labels, splits.train.classes)
      .save(cfg.output_dir / "class_averages.csv");
  print_metrics(log, "teacher", "train", run.train);
  print_metrics(log, "teacher", "val", run.val);
  print_metrics(log, "teacher", "test", run.test);
  log << "wrote " << (cfg.output_dir / "teacher.bin").string() << '\n';
}

void write_alpha_dump(const fs::path& path, const std::vector<AlphaRecord>& records) {
  std::ofstream out = open_out(path);
  out << "id,epoch,alpha,teacher_correct,st_discrepancy,is_outlier\n";
  for (const AlphaRecord& r : records) {
    out << r.id << ',' << r.epoch << ',' << num(r.alpha) << ',' << (r.teacher_correct ? 1 : 0) << ','
        << num(r.discrepancy) << ',' << (r.is_outlier ? 1 : 0) << '\n';
  }
}

std::vector<AlphaRecord> read_alpha_dump(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_table(path, header);
  const std::vector<std::string> expected{"id", "epoch", "alpha", "teacher_correct", "st_discrepancy", "is_outlier"};
  if (header != expected) throw DataError(path.string() + ": unexpected header");
  if (rows.empty()) throw DataError(path.string() + " has no records");
  std::vector<AlphaRecord> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = rows[r];
    AlphaRecord rec;
    rec.id = parse_count(c[0], path, r + 1);
    rec.epoch = parse_count(c[1], path, r + 1);
    rec.alpha = parse_real(c[2], path, r + 1);
    rec.teacher_correct = parse_count(c[3], path, r + 1) != 0;
    rec.discrepancy = parse_real(c[4], path, r + 1);
    rec.is_outlier = parse_count(c[5], path, r + 1) != 0;
    out.push_back(rec);
  }
  return out;
}

void write_triplet_dump(const fs::path& path, const std::vector<SampleSnapshot>& snaps) {
  std::ofstream out = open_out(path);
  const std::size_t c = snaps.empty() ? 0 : snaps.front().student_probs.size();
  out << "id,label";
  for (std::size_t k = 0; k < c; ++k) out << ",s" << k;
  for (std::size_t k = 0; k < c; ++k) out << ",t" << k;
  out << '\n';
  for (const SampleSnapshot& s : snaps) {
    out << s.id << ',' << s.label;
    for (double v : s.student_probs) out << ',' << num(v);
    for (double v : s.teacher_probs) out << ',' << num(v);
    out << '\n';
  }
}

std::vector<TripletRow> read_triplet_dump(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_table(path, header);
  if (header.size() < 6 || header[0] != "id" || header[1] != "label" || (header.size() - 2) % 2 != 0) {
    throw DataError(path.string() + ": unexpected header");
  }
  if (rows.empty()) throw DataError(path.string() + " has no records");
  const std::size_t c = (header.size() - 2) / 2;
  std::vector<TripletRow> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    std::vector<double> s(c);
    std::vector<double> t(c);
    for (std::size_t k = 0; k < c; ++k) {
      s[k] = parse_real(cells[2 + k], path, r + 1);
      t[k] = parse_real(cells[2 + c + k], path, r + 1);
    }
    const std::size_t label = parse_count(cells[1], path, r + 1);
    if (label >= c) throw DataError(path.string() + " row " + std::to_string(r + 1) + ": label out of range");
    TripletRow row;
    row.id = parse_count(cells[0], path, r + 1);
    try {
      row.triplet = PredictionTriplet::make(Tensor::vector(std::move(s)), Tensor::vector(std::move(t)), label);
    } catch (const Error& e) {
      throw DataError(path.string() + " row " + std::to_string(r + 1) + ": " + e.what());
    }
    out.push_back(std::move(row));
  }
  return out;
}

void cmd_distill(const RunConfig& cfg, std::ostream& log) {
  print_config(cfg, log);
  const DatasetSplits splits = prepare_data(cfg);
  const ModelParams teacher = load_params(cfg.teacher_file);
  const DistillRun run = run_distill(cfg, splits, teacher);
  const TrainResult& res = run.result;

  fs::create_directories(cfg.output_dir);
  save_params(cfg.output_dir / "student.bin", res.student);
  save_params(cfg.output_dir / "student_final.bin", res.final_student);
  if (res.policy.learned()) save_params(cfg.output_dir / "fusion.bin", res.policy.omega());

  {
    std::ofstream out = open_out(cfg.output_dir / "training_log.csv");
    out << "epoch,train_loss,val_ce,val_acc,alpha_mean,alpha_std";
    for (std::size_t p = 0; p < kPartitionCount; ++p) out << ",alpha_" << to_string(static_cast<RatioPartition>(p));
    out << ",alpha_normal,alpha_outlier,batch_checksum\n";
    for (const EpochRecord& e : res.log.epochs) {
      out << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_ce) << ',' << num(e.val_acc) << ','
          << num(e.alpha_mean) << ',' << num(e.alpha_std);
      for (const auto& m : e.partition_alpha) out << ',' << opt_num(m);
      out << ',' << opt_num(e.normal_alpha) << ',' << opt_num(e.outlier_alpha) << ',' << e.batch_checksum << '\n';
    }
  }
  write_alpha_dump(cfg.output_dir / "alpha_dump.csv", res.log.alphas);
  write_triplet_dump(cfg.output_dir / "triplets.csv", res.final_snapshot);
  write_metrics(cfg.output_dir / "student_metrics.csv", {{"val", run.val}, {"test", run.test}});

  log << "epochs run: " << res.log.epochs.size() << (res.log.early_stopped ? " (early stop)" : "")
      << ", best epoch " << res.log.best_epoch << '\n';
  print_metrics(log, "student", "val", run.val);
  print_metrics(log, "student", "test", run.test);
}

void cmd_analyze(const RunConfig& cfg, std::ostream& log) {
  print_config(cfg, log);
  const std::vector<AlphaRecord> records = read_alpha_dump(cfg.alpha_dump);
  const std::vector<TripletRow> rows = read_triplet_dump(cfg.triplet_dump);

  std::set<std::size_t> epoch_set;
  for (const AlphaRecord& r : records) epoch_set.insert(r.epoch);
  const std::vector<std::size_t> epochs(epoch_set.begin(), epoch_set.end());
  const std::size_t final_epoch = epochs.back();

  // Align the final-epoch ratios with the triplets by sample id.
  std::map<std::size_t, const AlphaRecord*> final_by_id;
  for (const AlphaRecord& r : records) {
    if (r.epoch != final_epoch) continue;
    if (!final_by_id.emplace(r.id, &r).second) {
      throw DataError("sample id " + std::to_string(r.id) + " appears twice at epoch " + std::to_string(final_epoch));
    }
  }
  std::set<std::size_t> seen;
  std::vector<PredictionTriplet> triplets;
  std::vector<const AlphaRecord*> aligned;
  for (const TripletRow& row : rows) {
    auto it = final_by_id.find(row.id);
    if (it == final_by_id.end() || !seen.insert(row.id).second) {
      throw DataError("id misalignment: first offending id " + std::to_string(row.id) +
                      " (triplet dump vs ratio dump at epoch " + std::to_string(final_epoch) + ")");
    }
    triplets.push_back(row.triplet);
    aligned.push_back(it->second);
  }
  for (const auto& [id, rec] : final_by_id) {
    if (!seen.count(id)) {
      throw DataError("id misalignment: first offending id " + std::to_string(id) + " (missing from triplet dump)");
    }
  }

  const DiscrepancyGrouping grouping = discrepancy_grouping(triplets);
  for (const std::string& w : grouping.warnings) log << "warning: " << w << '\n';

  fs::create_directories(cfg.report_dir);
  {
    std::ofstream out = open_out(cfg.report_dir / "discrepancy_groups.csv");
    out << "id,label,teacher_correct,st_discrepancy,group,alpha\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << rows[i].id << ',' << rows[i].triplet.class_index << ',' << (grouping.teacher_correct[i] ? 1 : 0) << ','
          << num(grouping.discrepancy[i]) << ',' << grouping.group[i] + 1 << ',' << num(aligned[i]->alpha) << '\n';
    }
  }
  {
    std::ofstream out = open_out(cfg.report_dir / "group_summary.csv");
    out << "subset,group,count,st_min,st_max,alpha_mean\n";
    for (int subset = 1; subset >= 0; --subset) {
      const char* name = subset ? "teacher_correct" : "teacher_incorrect";
      for (std::size_t g = 0; g < DiscrepancyGrouping::kGroups; ++g) {
        std::size_t count = 0;
        double lo = 0.0;
        double hi = 0.0;
        double alpha_sum = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (grouping.teacher_correct[i] != (subset == 1) || grouping.group[i] != g) continue;
          const double d = grouping.discrepancy[i];
          lo = count ? std::min(lo, d) : d;
          hi = count ? std::max(hi, d) : d;
          alpha_sum += aligned[i]->alpha;
          ++count;
        }
        out << name << ',' << g + 1 << ',' << count;
        if (count) {
          out << ',' << num(lo) << ',' << num(hi) << ',' << num(alpha_sum / static_cast<double>(count)) << '\n';
        } else {
          out << ",absent,absent,absent\n";
        }
      }
    }
  }
  {
    const std::vector<RatioReportRow> table = fusion_ratio_report(records, epochs);
    std::ofstream out = open_out(cfg.report_dir / "fusion_ratio_table.csv");
    out << "epoch";
    for (std::size_t p = 0; p < kPartitionCount; ++p) out << ',' << to_string(static_cast<RatioPartition>(p));
    for (std::size_t p = 0; p < kPartitionCount; ++p) out << ",n_" << to_string(static_cast<RatioPartition>(p));
    out << '\n';
    for (const RatioReportRow& row : table) {
      out << row.epoch;
      for (const auto& m : row.mean) out << ',' << opt_num(m);
      for (std::size_t c : row.count) out << ',' << c;
      out << '\n';
    }
  }
  {
    std::vector<double> all;
    std::vector<double> normal;
    std::vector<double> outlier;
    for (const AlphaRecord* r : aligned) {
      all.push_back(r->alpha);
      (r->is_outlier ? outlier : normal).push_back(r->alpha);
    }
    const auto write_hist = [&](const char* name, const std::vector<double>& values) {
      const Histogram h = ratio_histogram(values);
      std::ofstream out = open_out(cfg.report_dir / name);
      out << "# bin_center density (n=" << values.size() << ", epoch " << final_epoch << ")\n";
      for (std::size_t b = 0; b < h.centers.size(); ++b) out << num(h.centers[b]) << ' ' << num(h.density[b]) << '\n';
    };
    write_hist("alpha_hist_all.dat", all);
    write_hist("alpha_hist_normal.dat", normal);
    write_hist("alpha_hist_outlier.dat", outlier);
  }
  log << "analyzed " << rows.size() << " samples over " << epochs.size() << " logged epochs; reports in "
      << cfg.report_dir.string() << '\n';
}

bool cmd_selfcheck(std::ostream& log) {
  bool ok = true;
  for (const CheckResult& c : run_selfcheck()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e (limit %.1e)", c.value, c.threshold);
    log << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << buf << '\n';
    ok = ok && c.pass;
  }
  log << (ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return ok;
}

}  // namespace tgkd
