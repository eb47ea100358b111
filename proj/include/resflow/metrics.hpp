#pragma once

// Out-of-distribution detection metrics. Higher scores mean "more
// in-distribution". Equal scores always form a single threshold event.

#include <span>
#include <string>
#include <vector>

namespace resflow {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Threshold sweep from +inf downwards; starts at (0,0) and ends at (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> in_scores,
                                std::span<const double> out_scores);
double trapezoid_area(std::span<const RocPoint> curve);

// Mann-Whitney statistic with ties counted as 1/2, computed from integer
// counts: (2 * wins + ties) / (2 * n_in * n_out).
double auroc(std::span<const double> in_scores, std::span<const double> out_scores);

// Threshold t = largest score with P_in(score >= t) >= target; returns
// P_out(score < t).
double tnr_at_tpr(std::span<const double> in_scores, std::span<const double> out_scores,
                  double tpr_target = 0.95);

// Average precision: sum over threshold events of (recall step) * precision.
double aupr(std::span<const double> pos_scores, std::span<const double> neg_scores);

// max over thresholds of (TPR + TNR) / 2.
double detection_accuracy(std::span<const double> in_scores, std::span<const double> out_scores);

struct EvalReport {
  double tnr_at_tpr95 = 0.0;
  double auroc = 0.0;
  double detection_accuracy = 0.0;
  double aupr_in = 0.0;
  double aupr_out = 0.0;
  std::vector<RocPoint> roc_points;
};

EvalReport evaluate(std::span<const double> in_scores, std::span<const double> out_scores);

// key=value lines, values printed with 17 significant digits.
std::string format_report(const EvalReport& report);
// "fpr,tpr" header plus one line per point.
std::string format_roc_csv(std::span<const RocPoint> curve);
// TNR@TPR95 AUROC DetAcc AUPR-in AUPR-out, as percentages.
std::string format_table_row(const std::string& label, const EvalReport& report);

}  // namespace resflow
