// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [--only N,...] [key=value ...]   (overrides apply to the synthetic runs)

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tgkd/commands.hpp"
#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

using namespace tgkd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const double ce = ce_grad_error(100, 11);
  const double kd1 = kd_grad_error(1.0, 100, 11);
  const double kd15 = kd_grad_error(1.5, 100, 11);
  const double kd4 = kd_grad_error(4.0, 100, 11);
  const double comb = combined_grad_error(100, 11);
  const double head = fusion_head_grad_error(100, 11);
  const double worst = std::max({ce, kd1, kd15, kd4, comb, head});
  std::ostringstream d;
  d << "worst rel err " << fmt("%.2e", worst) << " (ce " << fmt("%.1e", ce) << ", kd " << fmt("%.1e", kd1) << "/"
    << fmt("%.1e", kd15) << "/" << fmt("%.1e", kd4) << ", combined " << fmt("%.1e", comb) << ", head "
    << fmt("%.1e", head) << ")";
  return {worst < 1e-5, d.str()};
}

Outcome hypergradient_oracle() {
  const double eps[] = {1e-2, 5e-3, 2e-3, 1e-3};
  std::vector<double> err;
  for (double e : eps) err.push_back(hypergrad_oracle_check(HypergradMode::unrolled_fd, e));
  bool monotone = true;
  for (std::size_t i = 1; i < err.size(); ++i) monotone = monotone && err[i] < err[i - 1];
  const bool within = std::all_of(err.begin(), err.end(), [](double v) { return v < 1e-4; });
  std::ostringstream d;
  d << "rel err at eps 1e-2.." << "1e-3:";
  for (double v : err) d << ' ' << fmt("%.2e", v);
  return {within && monotone, d.str()};
}

bool same_trajectory(const TrainResult& a, const TrainResult& b) {
  if (a.log.epochs.size() != b.log.epochs.size()) return false;
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    const EpochRecord& x = a.log.epochs[i];
    const EpochRecord& y = b.log.epochs[i];
    if (x.train_loss != y.train_loss || x.val_ce != y.val_ce || x.val_acc != y.val_acc ||
        x.batch_checksum != y.batch_checksum) {
      return false;
    }
  }
  return a.final_student == b.final_student && a.student == b.student;
}

Outcome loss_identities(const RunConfig& base) {
  Rng rng(5);
  bool exact = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 2 + rng.index(9);
    std::vector<double> zs(c), zt(c);
    for (std::size_t k = 0; k < c; ++k) {
      zs[k] = rng.normal(0, 2);
      zt[k] = rng.normal(0, 3);
    }
    const LossValue kd = kd_loss(Tensor::vector(zs), Tensor::vector(zt), 1.0 + 3.0 * rng.uniform());
    const LossValue gt = ce_loss(Tensor::vector(zs), rng.index(c));
    const CombinedLoss c0 = combine(0.0, kd, gt);
    const CombinedLoss c1 = combine(1.0, kd, gt);
    exact = exact && c0.value == gt.value && c0.grad == gt.grad && c1.value == kd.value && c1.grad == kd.grad;
  }

  RunConfig cfg = base;
  cfg.epochs = std::min<std::size_t>(cfg.epochs, 30);
  const DatasetSplits splits = prepare_data(cfg);
  RunConfig tcfg = cfg;
  tcfg.teacher_epochs = 40;
  const ModelParams teacher = run_train_teacher(tcfg, splits).teacher;

  RunConfig frozen = cfg;
  frozen.policy = PolicyKind::tgeo;
  frozen.fusion_zero_init = true;
  frozen.outer_opt.lr = 0.0;
  RunConfig fixed = cfg;
  fixed.policy = PolicyKind::fixed;
  fixed.alpha = 0.5;
  const DistillRun a = run_distill(frozen, splits, teacher);
  const DistillRun b = run_distill(fixed, splits, teacher);
  const bool traj = same_trajectory(a.result, b.result);
  std::ostringstream d;
  d << "combine endpoints exact: " << (exact ? "yes" : "no") << "; zero-omega tgeo vs fixed 0.5 over "
    << a.result.log.epochs.size() << " epochs identical: " << (traj ? "yes" : "no");
  return {exact && traj, d.str()};
}

Outcome feature_algebra() {
  Rng rng(9);
  std::size_t bad = 0;
  double worst = 0.0;
  for (std::size_t c : {2u, 3u, 10u}) {
    Tensor rows = Tensor::matrix(c, c);
    for (std::size_t r = 0; r < c; ++r) {
      std::vector<double> z(c);
      for (double& v : z) v = rng.normal(0, 1);
      const Tensor p = softmax_temp(Tensor::vector(z), 1.0);
      std::copy(p.begin(), p.end(), rows.row(r).begin());
    }
    const ClassAverageTable table(rows);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> zs(c), zt(c);
      for (std::size_t k = 0; k < c; ++k) {
        zs[k] = rng.normal(0, 2);
        zt[k] = rng.normal(0, 2);
      }
      const PredictionTriplet tri = PredictionTriplet::make(softmax_temp(Tensor::vector(zs), 1.0),
                                                            softmax_temp(Tensor::vector(zt), 1.0), rng.index(c));
      const EdgeVectors e = edge_vectors(tri);
      const Tensor closure = e.student_to_truth - e.teacher_to_truth - e.student_to_teacher;
      for (double v : closure) worst = std::max(worst, std::abs(v));
      for (const Tensor* edge : {&e.student_to_truth, &e.teacher_to_truth, &e.student_to_teacher}) {
        worst = std::max(worst, std::abs(std::accumulate(edge->begin(), edge->end(), 0.0)));
      }
      if (build_feature(tri, table, RelationMode::vertices).size() != 4 * c) ++bad;
      if (build_feature(tri, table, RelationMode::edges).size() != 5 * c) ++bad;
      if (build_feature(tri, table, RelationMode::full).size() != 9 * c) ++bad;
    }
  }
  std::ostringstream d;
  d << "3000 triplets, max |closure| / |edge sum| " << fmt("%.1e", worst) << ", length mismatches " << bad;
  return {bad == 0 && worst < 1e-14, d.str()};
}

// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double teacher_acc = 0.0;
  double fixed_acc = 0.0;
  double tgeo_acc = 0.0;
  std::array<std::optional<double>, kPartitionCount> first{};
  std::array<std::optional<double>, kPartitionCount> last{};
  double outlier_alpha = 0.0;
  double normal_alpha = 0.0;
  std::size_t tgeo_epochs = 0;
};

std::vector<SeedRun> synthetic_runs(const RunConfig& base, std::size_t seeds, bool verbose) {
  std::vector<SeedRun> out;
  for (std::size_t s = 1; s <= seeds; ++s) {
    RunConfig cfg = base;
    cfg.seed = s;
    const DatasetSplits splits = prepare_data(cfg);
    const TeacherRun teacher = run_train_teacher(cfg, splits);

    RunConfig fixed = cfg;
    fixed.policy = PolicyKind::fixed;
    fixed.alpha = 0.5;
    RunConfig tgeo = cfg;
    tgeo.policy = PolicyKind::tgeo;
    const DistillRun f = run_distill(fixed, splits, teacher.teacher);
    const DistillRun g = run_distill(tgeo, splits, teacher.teacher);

    SeedRun r;
    r.seed = s;
    r.teacher_acc = teacher.test.acc;
    r.fixed_acc = f.test.acc;
    r.tgeo_acc = g.test.acc;
    const TrainingLog& log = g.result.log;
    const std::vector<RatioReportRow> table = fusion_ratio_report(log.alphas, log.logged_epochs);
    r.first = table.front().mean;
    r.last = table.back().mean;
    double so = 0, sn = 0;
    std::size_t no = 0, nn = 0;
    for (const SampleSnapshot& snap : g.result.final_snapshot) {
      (snap.is_outlier ? so : sn) += snap.alpha;
      ++(snap.is_outlier ? no : nn);
    }
    r.outlier_alpha = no ? so / static_cast<double>(no) : NAN;
    r.normal_alpha = nn ? sn / static_cast<double>(nn) : NAN;
    r.tgeo_epochs = log.epochs.size();
    if (verbose) {
      std::printf(
          "  seed %zu: teacher %.3f fixed %.3f tgeo %.3f (epochs %zu) | first [%s] last [%s] | outlier %.3f normal %.3f\n",
          s, r.teacher_acc, r.fixed_acc, r.tgeo_acc, r.tgeo_epochs,
          [&] {
            std::string t;
            for (auto& m : r.first) t += m ? fmt("%.3f ", *m) : "- ";
            return t;
          }().c_str(),
          [&] {
            std::string t;
            for (auto& m : r.last) t += m ? fmt("%.3f ", *m) : "- ";
            return t;
          }().c_str(),
          r.outlier_alpha, r.normal_alpha);
    }
    out.push_back(r);
  }
  return out;
}

Outcome distillation_trend(const std::vector<SeedRun>& runs) {
  double diff = 0.0, fixed = 0.0, tgeo = 0.0;
  for (const SeedRun& r : runs) {
    diff += r.tgeo_acc - r.fixed_acc;
    fixed += r.fixed_acc;
    tgeo += r.tgeo_acc;
  }
  const double n = static_cast<double>(runs.size());
  std::ostringstream d;
  d << "mean test acc tgeo " << fmt("%.4f", tgeo / n) << " vs fixed-0.5 " << fmt("%.4f", fixed / n)
    << ", mean paired diff " << fmt("%+.4f", diff / n);
  return {diff / n >= 0.0, d.str()};
}

constexpr std::size_t kIL = static_cast<std::size_t>(RatioPartition::incorrect_large);
constexpr std::size_t kIS = static_cast<std::size_t>(RatioPartition::incorrect_small);
constexpr std::size_t kCL = static_cast<std::size_t>(RatioPartition::correct_large);

Outcome table_trend(const std::vector<SeedRun>& runs) {
  std::size_t ok = 0;
  std::ostringstream d;
  for (const SeedRun& r : runs) {
    const auto& l = r.last;
    const auto& f = r.first;
    const bool order = l[kCL] && l[kIL] && l[kIS] && *l[kCL] > *l[kIL] && *l[kCL] > *l[kIS];
    const bool falling = f[kIL] && f[kIS] && l[kIL] && l[kIS] && *l[kIL] < *f[kIL] && *l[kIS] < *f[kIS];
    ok += order && falling;
    d << (order && falling ? '+' : '-');
  }
  d << " (" << ok << "/" << runs.size() << " seeds with correct-large above both incorrect cells and falling incorrect cells)";
  return {ok >= 4, d.str()};
}

Outcome outlier_trend(const std::vector<SeedRun>& runs) {
  std::size_t ok = 0;
  double so = 0, sn = 0;
  for (const SeedRun& r : runs) {
    ok += r.outlier_alpha < r.normal_alpha;
    so += r.outlier_alpha;
    sn += r.normal_alpha;
  }
  const double n = static_cast<double>(runs.size());
  std::ostringstream d;
  d << ok << "/" << runs.size() << " seeds with outlier alpha below normal; means " << fmt("%.3f", so / n) << " vs "
    << fmt("%.3f", sn / n);
  return {ok >= 4, d.str()};
}

// ---------------------------------------------------------------------------

Outcome auc_oracle() {
  const double err = auc_oracle_error(50, 23);
  return {err <= 1e-12, "50 fixtures, max |macro_auc - pair count| " + fmt("%.1e", err)};
}

Outcome data_machinery() {
  std::vector<std::string> fails;
  // Oversampling.
  ClusterSpec spec;
  spec.classes = 4;
  spec.per_class = 100;
  spec.dim = 5;
  spec.imbalance_ratio = 5.0;
  spec.seed = 3;
  const Dataset imb = synth_gaussian_clusters(spec);
  const Dataset bal = oversample_minority(imb, 4);
  const auto counts = bal.class_counts();
  if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end()) {
    fails.push_back("unequal histogram");
  }
  for (std::size_t i = 0; i < imb.size(); ++i) {
    const bool same = bal.ids[i] == imb.ids[i] && bal.labels[i] == imb.labels[i] &&
                      std::equal(imb.features.row(i).begin(), imb.features.row(i).end(), bal.features.row(i).begin());
    if (!same) {
      fails.push_back("original row changed");
      break;
    }
  }

  // Splits.
  spec.imbalance_ratio = 1.0;
  spec.per_class = 200;
  Dataset ds = synth_gaussian_clusters(spec);
  normalize_min_max(ds);
  ds = inject_gaussian_outliers(ds, 40, 8);
  const DatasetSplits a = split(ds, 0.6, 0.2, 17);
  const DatasetSplits b = split(ds, 0.6, 0.2, 17);
  if (a.train.ids != b.train.ids || a.val.ids != b.val.ids || a.test.ids != b.test.ids) {
    fails.push_back("split not deterministic");
  }
  std::set<std::size_t> all;
  for (const Dataset* part : {&a.train, &a.val, &a.test}) all.insert(part->ids.begin(), part->ids.end());
  if (all.size() != ds.size() || a.train.size() + a.val.size() + a.test.size() != ds.size()) {
    fails.push_back("splits overlap or lose rows");
  }
  std::vector<std::size_t> clean(spec.classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) clean[ds.labels[i]] += !ds.is_outlier[i];
  for (const Dataset* part : {&a.val, &a.test}) {
    const auto pc = part->class_counts();
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const double frac = static_cast<double>(pc[c]) / static_cast<double>(clean[c]);
      if (std::abs(frac - 0.2) > 0.01) fails.push_back("split not stratified");
    }
  }

  // Outliers.
  Dataset base;
  base.features = Tensor::matrix(2, 16, 0.5);
  base.labels = {0, 1};
  base.is_outlier = {0, 0};
  base.ids = {0, 1};
  base.classes = 2;
  base.image_mode = true;
  const Dataset noisy = inject_gaussian_outliers(base, 10000, 99);
  double sum = 0.0;
  std::size_t n = 0;
  bool in_range = true;
  for (std::size_t i = 2; i < noisy.size(); ++i) {
    for (double v : noisy.features.row(i)) {
      in_range = in_range && v >= 0.0 && v <= 1.0;
      sum += v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  if (!in_range) fails.push_back("outlier feature outside [0,1]");
  if (mean < 0.48 || mean > 0.52) fails.push_back("outlier mean off");

  std::ostringstream d;
  d << "class counts after oversampling " << counts[0] << "x" << counts.size() << ", outlier mean "
    << fmt("%.4f", mean);
  for (const auto& f : fails) d << "; " << f;
  return {fails.empty(), d.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "tgkd_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> files;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    {
      std::ofstream cfg(dir / "run.cfg");
      cfg << "seed = 4\noutput_dir = " << (dir / "out").string()
          << "\nper_class = 80\ndim = 8\n[train-teacher]\nteacher_epochs = 30\n[distill]\nepochs = 12\n"
             "alpha_dump_interval = 4\n";
    }
    for (const char* cmd : {"train-teacher", "distill", "analyze"}) {
      const std::string line = std::string(TGKD_CLI_PATH) + " " + cmd + " --config " + (dir / "run.cfg").string() +
                               " > " + (dir / (std::string(cmd) + ".log")).string() + " 2>&1";
      if (std::system(line.c_str()) != 0) return {false, std::string(cmd) + " failed"};
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a" / "out")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a" / "out");
    const fs::path twin = root / "b" / "out" / rel;
    if (!fs::exists(twin)) return {false, rel.string() + " missing from second run"};
    if (slurp(entry.path()) != slurp(twin)) return {false, rel.string() + " differs between runs"};
    ++compared;
  }
  const bool has_params = fs::exists(root / "a" / "out" / "teacher.bin") && fs::exists(root / "a" / "out" / "student.bin");
  fs::remove_all(root);
  return {has_params && compared >= 10, std::to_string(compared) + " output files byte-identical across reruns"};
}

RunConfig acceptance_config(const std::vector<std::string>& overrides) {
  ConfigValues v;
  // 900 clean samples -> 600 / 150 / 150, plus 60 injected training outliers.
  v.set("classes", "3");
  v.set("dim", "16");
  v.set("per_class", "300");
  v.set("train_frac", "0.666667");
  v.set("val_frac", "0.166667");
  v.set("outlier_fraction", "0.1");
  v.set("tau", "2");
  v.set("teacher_hidden", "64,64");
  v.set("teacher_epochs", "200");
  v.set("student_hidden", "16");
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override needs key=value: " + o);
    v.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return resolve_config(v);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::vector<std::string> overrides;
  bool verbose = true;
  std::size_t seeds = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--quiet") {
      verbose = false;
    } else if (a == "--seeds" && i + 1 < argc) {
      seeds = std::stoul(argv[++i]);
    } else {
      overrides.push_back(a);
    }
  }
  const auto want = [&](int k) { return only.empty() || only.count(k); };

  int failures = 0;
  const auto report = [&](int k, const char* title, const std::function<Outcome()>& fn) {
    if (!want(k)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", k, title, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  RunConfig base;
  try {
    base = acceptance_config(overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bad override: %s\n", e.what());
    return 2;
  }

  report(1, "gradient correctness", gradients);
  report(2, "hypergradient oracle", hypergradient_oracle);
  report(3, "loss identities", [&] { return loss_identities(base); });
  report(4, "feature algebra", feature_algebra);

  std::vector<SeedRun> runs;
  if (want(5) || want(6) || want(7)) {
    try {
      runs = synthetic_runs(base, seeds, verbose);
    } catch (const std::exception& e) {
      std::printf("synthetic runs failed: %s\n", e.what());
    }
  }
  const auto need_runs = [&](std::function<Outcome(const std::vector<SeedRun>&)> fn) {
    return [&runs, fn] { return runs.empty() ? Outcome{false, "no runs"} : fn(runs); };
  };
  report(5, "synthetic distillation trend", need_runs(distillation_trend));
  report(6, "fusion-ratio table ordering", need_runs(table_trend));
  report(7, "outlier ratios", need_runs(outlier_trend));
  report(8, "AUC oracle", auc_oracle);
  report(9, "data machinery", data_machinery);
  report(10, "pipeline determinism", determinism);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
