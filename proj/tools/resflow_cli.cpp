// resflow command-line tool: synth, fit, tune, eval, bench.
// Talks to the library only through the C interface in resflow/resflow.h.

#include <resflow/resflow.h>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(rf_status st, const std::string& what) {
  if (st == RF_OK) return;
  std::string msg = what + ": " + rf_status_name(st);
  const std::string detail = rf_last_error();
  if (!detail.empty()) msg += ": " + detail;
  throw RuntimeFailure(msg);
}

struct FeatureSetDeleter {
  void operator()(rf_featureset* p) const { rf_featureset_free(p); }
};
struct DetectorDeleter {
  void operator()(rf_detector* p) const { rf_detector_free(p); }
};
struct GdaDeleter {
  void operator()(rf_gda* p) const { rf_gda_free(p); }
};
using FeatureSetPtr = std::unique_ptr<rf_featureset, FeatureSetDeleter>;
using DetectorPtr = std::unique_ptr<rf_detector, DetectorDeleter>;
using GdaPtr = std::unique_ptr<rf_gda, GdaDeleter>;

FeatureSetPtr read_features(const std::string& path) {
  rf_featureset* p = nullptr;
  check(rf_featureset_read(path.c_str(), &p), "reading " + path);
  return FeatureSetPtr(p);
}

DetectorPtr load_detector(const std::string& dir) {
  rf_detector* p = nullptr;
  check(rf_detector_load(dir.c_str(), &p), "loading detector " + dir);
  return DetectorPtr(p);
}

std::size_t sample_count(const rf_featureset* f) {
  rf_featureset_info info{};
  check(rf_featureset_info_get(f, &info), "feature set info");
  return info.samples;
}

std::vector<double> score(const rf_detector* det, const rf_featureset* f,
                          rf_method method = RF_METHOD_RESFLOW) {
  std::vector<double> s(sample_count(f));
  check(rf_detector_score(det, f, method, s.data(), s.size()), "scoring");
  return s;
}

rf_eval_report evaluate(const std::vector<double>& in, const std::vector<double>& out) {
  rf_eval_report r{};
  check(rf_evaluate(in.data(), in.size(), out.data(), out.size(), &r), "evaluating");
  return r;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string table_row(const std::string& label, const rf_eval_report& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %6.1f %6.1f %6.1f %6.1f %6.1f", label.c_str(),
                100.0 * r.tnr_at_tpr95, 100.0 * r.auroc, 100.0 * r.detection_accuracy,
                100.0 * r.aupr_in, 100.0 * r.aupr_out);
  return buf;
}

const char* table_header() { return "method       TNR95  AUROC DetAcc AUPRin AUPRout"; }

std::string report_text(const rf_eval_report& r) {
  std::ostringstream o;
  o << "tnr_at_tpr95=" << num(r.tnr_at_tpr95) << "\n"
    << "auroc=" << num(r.auroc) << "\n"
    << "detection_accuracy=" << num(r.detection_accuracy) << "\n"
    << "aupr_in=" << num(r.aupr_in) << "\n"
    << "aupr_out=" << num(r.aupr_out) << "\n";
  return o.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw RuntimeFailure("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) throw CLI::ValidationError("not a number list: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("empty number list");
  return out;
}

// Records every flag of the subcommand that ran, for the run directory.
void write_run_manifest(const fs::path& dir, const CLI::App& sub, std::uint64_t seed,
                        const char* name = "run_manifest.txt") {
  std::ostringstream o;
  o << "command=" << sub.get_name() << "\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string key = opt->get_name();
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    std::string value;
    for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    if (opt->get_expected_max() == 0) value = opt->count() ? "1" : "0";
    if (value.empty()) value = opt->get_default_str();
    o << key << "=" << value << "\n";
  }
  o << "effective_seed=" << seed << "\n";
  o << "library_version=" << rf_version() << "\n";
  write_text(dir / name, o.str());
}

std::uint64_t effective_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("RESFLOW_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw CLI::ValidationError("RESFLOW_SEED is not an unsigned integer");
    return v;
  }
  return flag;
}

struct FitFlags {
  std::string train;
  std::string out;
  std::size_t blocks = 10;
  std::size_t hidden = 0;
  double lr = 1e-5;
  std::size_t epochs = 100;
  std::size_t patience = 5;
  std::size_t batch = 256;
  std::size_t eval_interval = 1;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  bool baseline_only = false;
  std::size_t parallel = 0;
};

void add_fit_flags(CLI::App* sub, FitFlags& f) {
  sub->add_option("--train", f.train, "Training features (RFFS1, labelled)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--blocks", f.blocks, "Coupling blocks per flow")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--hidden", f.hidden, "Hidden width (0 = automatic)")->capture_default_str();
  sub->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--epochs", f.epochs, "Maximum epochs")->capture_default_str();
  sub->add_option("--patience", f.patience, "Evaluations without improvement before stopping")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--batch", f.batch, "Minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--eval-interval", f.eval_interval, "Epochs between evaluations")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--val-fraction", f.val_fraction, "Held-out fraction when no val split is tagged")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--seed", f.seed, "Seed (RESFLOW_SEED overrides)")->capture_default_str();
  sub->add_flag("--baseline-only", f.baseline_only, "Stop after the Gaussian fit");
  sub->add_option("--parallel", f.parallel, "Concurrent trainings (0 = all cores)")->capture_default_str();
}

rf_fit_config to_config(const FitFlags& f, std::uint64_t seed) {
  rf_fit_config cfg;
  rf_fit_config_default(&cfg);
  cfg.n_blocks = f.blocks;
  cfg.hidden = f.hidden;
  cfg.learning_rate = f.lr;
  cfg.max_epochs = f.epochs;
  cfg.patience = f.patience;
  cfg.batch_size = f.batch;
  cfg.eval_interval = f.eval_interval;
  cfg.val_fraction = f.val_fraction;
  cfg.seed = seed;
  cfg.baseline_only = f.baseline_only ? 1 : 0;
  cfg.parallel = f.parallel;
  return cfg;
}

void on_history(void* user, size_t layer, size_t cls, size_t epoch, size_t step, double train_ll,
                double val_ll) {
  auto& csv = *static_cast<std::ostringstream*>(user);
  csv << layer << "," << cls << "," << epoch << "," << step << "," << num(train_ll) << ","
      << num(val_ll) << "\n";
}

// ---- commands -------------------------------------------------------------

struct SynthFlags {
  std::string kind = "gaussian";
  std::size_t n = 1000;
  std::size_t dim = 2;
  std::size_t classes = 2;
  double sep = 3.0;
  double offset = 0.0;
  bool flip = false;
  double radius = 3.0;
  double noise = 0.3;
  bool per_class_cov = false;
  std::size_t layers = 1;
  std::uint64_t layer_seed = 0;
  std::uint64_t seed = 0;
  std::string split;
  std::string out;
  bool offset_given = false;
};

int run_synth(const SynthFlags& f) {
  rf_synth_spec spec;
  rf_synth_spec_default(&spec);
  spec.kind = f.kind.c_str();
  spec.n = f.n;
  spec.dim = f.dim;
  spec.classes = f.classes;
  spec.sep = f.sep;
  spec.offset = f.offset_given ? f.offset : (f.kind == "shifted-ood" ? 1.5 : 0.0);
  spec.flip = f.flip ? 1 : 0;
  spec.radius = f.radius;
  spec.noise = f.noise;
  spec.per_class_cov = f.per_class_cov ? 1 : 0;
  spec.layers = f.layers;
  spec.layer_seed = f.layer_seed;
  spec.seed = effective_seed(f.seed);
  rf_featureset* raw = nullptr;
  check(rf_synth(&spec, &raw), "synth");
  FeatureSetPtr set(raw);
  if (!f.split.empty()) {
    const auto fr = parse_doubles(f.split);
    if (fr.size() != 3) throw CLI::ValidationError("--split needs three fractions train,val,test");
    check(rf_featureset_split(set.get(), fr[0], fr[1], fr[2], spec.seed), "split");
  }
  check(rf_featureset_write(set.get(), f.out.c_str()), "writing " + f.out);
  std::cout << "wrote " << f.out << " (" << sample_count(set.get()) << " samples)\n";
  return 0;
}

int run_fit(const FitFlags& f, const CLI::App& sub) {
  const std::uint64_t seed = effective_seed(f.seed);
  auto train = read_features(f.train);
  make_dir(f.out);
  const rf_fit_config cfg = to_config(f, seed);
  std::ostringstream history;
  history << "layer,class,epoch,step,train_ll,val_ll\n";
  rf_fit_callbacks cb{on_history, nullptr, 0, &history};
  rf_detector* raw = nullptr;
  check(rf_detector_fit(train.get(), &cfg, &cb, &raw), "fit");
  DetectorPtr det(raw);
  check(rf_detector_save(det.get(), f.out.c_str()), "saving detector");
  write_text(fs::path(f.out) / "history.csv", history.str());
  write_run_manifest(f.out, sub, seed);
  rf_detector_info info{};
  check(rf_detector_info_get(det.get(), &info), "detector info");
  std::cout << "fitted " << info.layers << " layer(s) x " << info.classes << " class(es)"
            << (f.baseline_only ? " [baseline only]" : "") << " -> " << f.out << "\n";
  return 0;
}

struct TuneFlags {
  std::string detector;
  std::string val_in;
  std::string val_out;
  std::string eps_grid = "0,0.0005,0.001,0.0014,0.002";
};

int run_tune(const TuneFlags& f, const CLI::App& sub) {
  const auto grid = parse_doubles(f.eps_grid);
  for (double e : grid)
    if (e < 0.0) throw CLI::ValidationError("--eps-grid values must be >= 0");
  auto det = load_detector(f.detector);
  auto in = read_features(f.val_in);
  auto out = read_features(f.val_out);
  if (sample_count(in.get()) == 0 || sample_count(out.get()) == 0)
    throw RuntimeFailure("validation files must not be empty");
  rf_tune_result res{};
  std::vector<double> cand(grid.size());
  check(rf_detector_tune(det.get(), in.get(), out.get(), grid.data(), grid.size(), &res, cand.data()),
        "tune");
  check(rf_detector_save(det.get(), f.detector.c_str()), "saving detector");

  std::ostringstream csv;
  csv << "epsilon,val_auroc\n";
  for (std::size_t i = 0; i < grid.size(); ++i) csv << num(grid[i]) << "," << num(cand[i]) << "\n";
  write_text(fs::path(f.detector) / "tune.csv", csv.str());
  write_run_manifest(f.detector, sub, 0, "tune_manifest.txt");

  std::cout << "epsilon=" << num(res.epsilon) << " val_auroc=" << num(res.auroc) << "\n";
  if (res.weak)
    std::cerr << "warning: best validation AUROC " << res.auroc
              << " is below 0.6; in- and out-distribution validation data look alike\n";
  return 0;
}

struct EvalFlags {
  std::string detector;
  std::string test_in;
  std::string test_out;
  std::string out;
  std::string label = "resflow";
};

void write_eval_outputs(const fs::path& dir, const std::vector<double>& in,
                        const std::vector<double>& out, const rf_eval_report& r) {
  write_text(dir / "report.txt", report_text(r));
  std::size_t n = 0;
  check(rf_roc_curve(in.data(), in.size(), out.data(), out.size(), nullptr, nullptr, 0, &n), "roc");
  std::vector<double> fpr(n), tpr(n);
  check(rf_roc_curve(in.data(), in.size(), out.data(), out.size(), fpr.data(), tpr.data(), n, &n),
        "roc");
  std::ostringstream roc;
  roc << "fpr,tpr\n";
  for (std::size_t i = 0; i < n; ++i) roc << num(fpr[i]) << "," << num(tpr[i]) << "\n";
  write_text(dir / "roc.csv", roc.str());
  std::ostringstream sc;
  sc << "label,score\n";
  for (double s : in) sc << "1," << num(s) << "\n";
  for (double s : out) sc << "0," << num(s) << "\n";
  write_text(dir / "scores.csv", sc.str());
}

int run_eval(const EvalFlags& f, const CLI::App& sub) {
  auto det = load_detector(f.detector);
  auto in = read_features(f.test_in);
  auto out = read_features(f.test_out);
  make_dir(f.out);
  const auto s_in = score(det.get(), in.get());
  const auto s_out = score(det.get(), out.get());
  const auto report = evaluate(s_in, s_out);
  write_eval_outputs(f.out, s_in, s_out, report);
  write_run_manifest(f.out, sub, 0);
  std::cout << table_header() << "\n" << table_row(f.label, report) << "\n";
  return 0;
}

struct BenchFlags {
  FitFlags fit;
  std::string test_in;
  std::string test_out;
  std::string compare = "baseline,gda,resflow";
  std::size_t iterations = 0;
  double epsilon = 0.0;
};

struct CheckpointLog {
  const rf_featureset* in;
  const rf_featureset* out;
  std::ostringstream csv;
  std::string error;
};

void on_checkpoint(void* user, size_t epoch, const rf_detector* current) {
  auto& log = *static_cast<CheckpointLog*>(user);
  if (!log.error.empty()) return;
  try {
    const auto r = evaluate(score(current, log.in), score(current, log.out));
    log.csv << epoch << "," << num(r.auroc) << "\n";
  } catch (const std::exception& e) {
    log.error = e.what();
  }
}

int run_bench(const BenchFlags& f, const CLI::App& sub) {
  std::vector<std::string> methods;
  {
    std::stringstream ss(f.compare);
    for (std::string m; std::getline(ss, m, ',');) {
      if (m != "baseline" && m != "gda" && m != "resflow")
        throw CLI::ValidationError("--compare accepts baseline, gda, resflow; got '" + m + "'");
      methods.push_back(m);
    }
  }
  if (methods.empty()) throw CLI::ValidationError("--compare is empty");
  const std::uint64_t seed = effective_seed(f.fit.seed);
  auto train = read_features(f.fit.train);
  auto in = read_features(f.test_in);
  auto out = read_features(f.test_out);
  make_dir(f.fit.out);

  std::map<std::string, rf_eval_report> rows;
  std::ostringstream method_csv;
  method_csv << "method,tnr_at_tpr95,auroc,detection_accuracy,aupr_in,aupr_out\n";
  auto record = [&](const std::string& name, const std::vector<double>& s_in,
                    const std::vector<double>& s_out) {
    const auto r = evaluate(s_in, s_out);
    rows[name] = r;
    method_csv << name << "," << num(r.tnr_at_tpr95) << "," << num(r.auroc) << ","
               << num(r.detection_accuracy) << "," << num(r.aupr_in) << "," << num(r.aupr_out)
               << "\n";
    const fs::path dir = fs::path(f.fit.out) / name;
    make_dir(dir);
    write_eval_outputs(dir, s_in, s_out, r);
  };

  for (const auto& m : methods) {
    if (m == "gda") {
      rf_gda* raw = nullptr;
      check(rf_gda_fit(train.get(), &raw), "gda fit");
      GdaPtr gda(raw);
      std::vector<double> s_in(sample_count(in.get())), s_out(sample_count(out.get()));
      check(rf_gda_score(gda.get(), in.get(), s_in.data(), s_in.size()), "gda score");
      check(rf_gda_score(gda.get(), out.get(), s_out.data(), s_out.size()), "gda score");
      record(m, s_in, s_out);
      continue;
    }
    FitFlags ff = f.fit;
    ff.baseline_only = m == "baseline";
    rf_fit_config cfg = to_config(ff, seed);
    CheckpointLog log{in.get(), out.get(), {}, {}};
    log.csv << "epoch,auroc\n";
    rf_fit_callbacks cb{nullptr, nullptr, 0, &log};
    if (m == "resflow" && f.iterations > 0) {
      cb.on_checkpoint = on_checkpoint;
      cb.checkpoint_every = f.iterations;
    }
    rf_detector* raw = nullptr;
    check(rf_detector_fit(train.get(), &cfg, &cb, &raw), m + " fit");
    DetectorPtr det(raw);
    if (!log.error.empty()) throw RuntimeFailure("checkpoint scoring: " + log.error);
    if (f.epsilon > 0.0)
      check(rf_detector_set_perturbation(det.get(), RF_PERTURB_FEATURE_SPACE, f.epsilon),
            "perturbation");
    record(m, score(det.get(), in.get()), score(det.get(), out.get()));
    check(rf_detector_save(det.get(), (fs::path(f.fit.out) / m / "detector").string().c_str()),
          "saving detector");
    if (m == "resflow" && f.iterations > 0)
      write_text(fs::path(f.fit.out) / "auroc_vs_epoch.csv", log.csv.str());
  }
  write_text(fs::path(f.fit.out) / "bench.csv", method_csv.str());
  write_run_manifest(f.fit.out, sub, seed);
  std::cout << table_header() << "\n";
  for (const auto& m : methods) std::cout << table_row(m, rows[m]) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual-flow density estimation and out-of-distribution detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rf_version()));

  std::vector<std::string> kinds;
  {
    std::stringstream ss(rf_synth_kinds());
    for (std::string k; std::getline(ss, k, ',');) kinds.push_back(k);
  }

  SynthFlags sf;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic RFFS1 feature file");
  synth->add_option("--kind", sf.kind, "Generator")->capture_default_str()->check(CLI::IsMember(kinds));
  synth->add_option("--n", sf.n, "Samples (per class for mixture)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--dim", sf.dim, "Dimension (gaussian, mixture)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--classes", sf.classes, "Classes (mixture)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--sep", sf.sep, "Class mean separation (mixture)")->capture_default_str();
  synth->add_option("--offset", sf.offset, "Shift along the last coordinate (shifted-ood default 1.5)");
  synth->add_flag("--flip", sf.flip, "shifted-ood: negate the curvature");
  synth->add_option("--radius", sf.radius, "Ring radius")->capture_default_str();
  synth->add_option("--noise", sf.noise, "Ring noise")->capture_default_str();
  synth->add_flag("--per-class-cov", sf.per_class_cov, "mixture: per-class diagonal covariances");
  synth->add_option("--layers", sf.layers, "Feature layers")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--layer-seed", sf.layer_seed, "Seed of the derived layer maps")->capture_default_str();
  synth->add_option("--seed", sf.seed, "Seed (RESFLOW_SEED overrides)")->capture_default_str();
  synth->add_option("--split", sf.split, "Stratified split fractions train,val,test");
  synth->add_option("--out", sf.out, "Output path")->required();

  FitFlags ff;
  CLI::App* fit = app.add_subcommand("fit", "Fit a detector");
  add_fit_flags(fit, ff);
  fit->add_option("--out", ff.out, "Detector directory")->required();

  TuneFlags tf;
  CLI::App* tune = app.add_subcommand("tune", "Choose epsilon and layer weights on validation data");
  tune->add_option("detector", tf.detector, "Detector directory")->required()->check(CLI::ExistingDirectory);
  tune->add_option("--val-in", tf.val_in, "In-distribution validation features")->required()->check(CLI::ExistingFile);
  tune->add_option("--val-out", tf.val_out, "Out-of-distribution validation features")->required()->check(CLI::ExistingFile);
  tune->add_option("--eps-grid", tf.eps_grid, "Comma-separated epsilon candidates")->capture_default_str();

  EvalFlags ef;
  CLI::App* eval = app.add_subcommand("eval", "Score test data and write metrics");
  eval->add_option("detector", ef.detector, "Detector directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--test-in", ef.test_in, "In-distribution test features")->required()->check(CLI::ExistingFile);
  eval->add_option("--test-out", ef.test_out, "Out-of-distribution test features")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ef.out, "Run directory")->required();
  eval->add_option("--label", ef.label, "Row label")->capture_default_str();

  BenchFlags bf;
  CLI::App* bench = app.add_subcommand("bench", "Compare baseline, GDA and residual-flow detectors");
  add_fit_flags(bench, bf.fit);
  bench->add_option("--test-in", bf.test_in, "In-distribution test features")->required()->check(CLI::ExistingFile);
  bench->add_option("--test-out", bf.test_out, "Out-of-distribution test features")->required()->check(CLI::ExistingFile);
  bench->add_option("--compare", bf.compare, "Methods to run")->capture_default_str();
  bench->add_option("--iterations", bf.iterations, "Checkpoint interval in epochs for the AUROC curve (0 = off)")
      ->capture_default_str();
  bench->add_option("--epsilon", bf.epsilon, "Feature-space perturbation for the flow detectors")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  bench->add_option("--out", bf.fit.out, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  sf.offset_given = synth->count("--offset") > 0;

  try {
    if (*synth) return run_synth(sf);
    if (*fit) return run_fit(ff, *fit);
    if (*tune) return run_tune(tf, *tune);
    if (*eval) return run_eval(ef, *eval);
    if (*bench) return run_bench(bf, *bench);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
