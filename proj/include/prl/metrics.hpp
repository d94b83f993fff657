#pragma once

// One-pass evaluation: center location error, overlap, precision and
// success curves, and benchmark aggregation.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prl/dataset.hpp"

namespace prl {

inline constexpr int kPrecisionPoints = 51;  // CLE thresholds 0..50 px
inline constexpr int kSuccessPoints = 21;    // IoU thresholds 0.00..1.00

double iou(const BBox& a, const BBox& b);
double cle(const BBox& a, const BBox& b);

struct OpeResult {
  std::array<double, kPrecisionPoints> precision{};
  std::array<double, kSuccessPoints> success{};
  double precision20 = 0;
  double auc = 0;
};

double success_threshold(int i);

/// precision(t) = fraction with CLE <= t; success(tau) = fraction with IoU > tau.
OpeResult ope_curves(const std::vector<BBox>& predicted, const std::vector<BBox>& gt);

/// Pointwise mean of the curves, equal weight per entry.
OpeResult mean_result(const std::vector<OpeResult>& results);

struct SequenceResult {
  std::string name;
  std::vector<std::string> attributes;
  OpeResult ope;
};

struct AttributeResult {
  int sequences = 0;
  OpeResult ope;
};

struct BenchmarkReport {
  std::vector<SequenceResult> sequences;
  OpeResult aggregate;
  std::map<std::string, AttributeResult> attributes;
  std::vector<std::string> warnings;
};

/// Results for sequence S are read from <results_dir>/<S>.txt. Missing files
/// are skipped with a warning; a frame-count mismatch throws DataError.
BenchmarkReport evaluate_benchmark(const std::vector<Sequence>& sequences,
                                   const std::filesystem::path& results_dir);

/// report.json plus threshold,value CSV files for every curve.
void write_report(const std::filesystem::path& out_dir, const BenchmarkReport& report);

}  // namespace prl
