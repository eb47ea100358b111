#include "resflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>

#include "resflow/error.hpp"

namespace resflow {

namespace {

struct Group {
  double score;
  std::uint64_t pos;
  std::uint64_t neg;
};

void check_inputs(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), Errc::invalid_argument, "metric needs nonempty score sets");
  for (double v : a) require(!std::isnan(v), Errc::numeric, "NaN score");
  for (double v : b) require(!std::isnan(v), Errc::numeric, "NaN score");
}

// Distinct scores in descending order with per-class counts.
std::vector<Group> grouped(std::span<const double> pos, std::span<const double> neg) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.emplace_back(v, true);
  for (double v : neg) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Group> groups;
  for (const auto& [score, is_pos] : all) {
    if (groups.empty() || groups.back().score != score) groups.push_back({score, 0, 0});
    (is_pos ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

bool meets_target(std::uint64_t count, std::uint64_t n, double target) {
  return static_cast<double>(count) / static_cast<double>(n) >= target - 1e-12;
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> in_scores,
                                std::span<const double> out_scores) {
  check_inputs(in_scores, out_scores);
  const double n_in = static_cast<double>(in_scores.size());
  const double n_out = static_cast<double>(out_scores.size());
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : grouped(in_scores, out_scores)) {
    tp += g.pos;
    fp += g.neg;
    curve.push_back({static_cast<double>(fp) / n_out, static_cast<double>(tp) / n_in});
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  return area;
}

double auroc(std::span<const double> in_scores, std::span<const double> out_scores) {
  check_inputs(in_scores, out_scores);
  std::uint64_t twice_wins = 0;
  std::uint64_t in_above = 0;
  for (const Group& g : grouped(in_scores, out_scores)) {
    twice_wins += g.neg * (2 * in_above + g.pos);
    in_above += g.pos;
  }
  return static_cast<double>(twice_wins) /
         (2.0 * static_cast<double>(in_scores.size()) * static_cast<double>(out_scores.size()));
}

double tnr_at_tpr(std::span<const double> in_scores, std::span<const double> out_scores,
                  double tpr_target) {
  check_inputs(in_scores, out_scores);
  require(tpr_target > 0.0 && tpr_target <= 1.0, Errc::invalid_argument,
          "TPR target must lie in (0, 1]");
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : grouped(in_scores, out_scores)) {
    tp += g.pos;
    fp += g.neg;
    if (meets_target(tp, in_scores.size(), tpr_target)) {
      return static_cast<double>(out_scores.size() - fp) / static_cast<double>(out_scores.size());
    }
  }
  return 0.0;  // unreachable: the last group has tp == n_in
}

double aupr(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  check_inputs(pos_scores, neg_scores);
  const double n_pos = static_cast<double>(pos_scores.size());
  double area = 0.0;
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : grouped(pos_scores, neg_scores)) {
    tp += g.pos;
    fp += g.neg;
    if (g.pos == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += static_cast<double>(g.pos) / n_pos * precision;
  }
  return area;
}

double detection_accuracy(std::span<const double> in_scores, std::span<const double> out_scores) {
  check_inputs(in_scores, out_scores);
  const double n_in = static_cast<double>(in_scores.size());
  const double n_out = static_cast<double>(out_scores.size());
  double best = 0.5;  // threshold above every score: TPR 0, TNR 1
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : grouped(in_scores, out_scores)) {
    tp += g.pos;
    fp += g.neg;
    const double acc = 0.5 * (static_cast<double>(tp) / n_in +
                              static_cast<double>(out_scores.size() - fp) / n_out);
    best = std::max(best, acc);
  }
  return best;
}

EvalReport evaluate(std::span<const double> in_scores, std::span<const double> out_scores) {
  EvalReport r;
  r.tnr_at_tpr95 = tnr_at_tpr(in_scores, out_scores, 0.95);
  r.auroc = auroc(in_scores, out_scores);
  r.detection_accuracy = detection_accuracy(in_scores, out_scores);
  r.aupr_in = aupr(in_scores, out_scores);
  std::vector<double> neg_in(in_scores.size()), neg_out(out_scores.size());
  std::transform(in_scores.begin(), in_scores.end(), neg_in.begin(), [](double v) { return -v; });
  std::transform(out_scores.begin(), out_scores.end(), neg_out.begin(), [](double v) { return -v; });
  r.aupr_out = aupr(neg_out, neg_in);
  r.roc_points = roc_curve(in_scores, out_scores);
  return r;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "tnr_at_tpr95=" << num(r.tnr_at_tpr95) << "\n"
     << "auroc=" << num(r.auroc) << "\n"
     << "detection_accuracy=" << num(r.detection_accuracy) << "\n"
     << "aupr_in=" << num(r.aupr_in) << "\n"
     << "aupr_out=" << num(r.aupr_out) << "\n";
  return os.str();
}

std::string format_roc_csv(std::span<const RocPoint> curve) {
  std::ostringstream os;
  os << "fpr,tpr\n";
  for (const auto& p : curve) os << num(p.fpr) << "," << num(p.tpr) << "\n";
  return os.str();
}

std::string format_table_row(const std::string& label, const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %6.1f %6.1f %6.1f %6.1f %6.1f", label.c_str(),
                100.0 * r.tnr_at_tpr95, 100.0 * r.auroc, 100.0 * r.detection_accuracy,
                100.0 * r.aupr_in, 100.0 * r.aupr_out);
  return buf;
}

}  // namespace resflow
