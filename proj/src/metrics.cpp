#include "prl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace prl {
namespace fs = std::filesystem;

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double cle(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

double success_threshold(int i) { return i / static_cast<double>(kSuccessPoints - 1); }

OpeResult ope_curves(const std::vector<BBox>& predicted, const std::vector<BBox>& gt) {
  if (predicted.size() != gt.size()) {
    throw DataError("ope_curves: " + std::to_string(predicted.size()) + " predictions for " +
                    std::to_string(gt.size()) + " ground-truth boxes");
  }
  if (gt.empty()) throw DataError("ope_curves: empty sequence");
  std::vector<double> errors, overlaps;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    errors.push_back(cle(predicted[i], gt[i]));
    overlaps.push_back(iou(predicted[i], gt[i]));
  }
  const double n = static_cast<double>(gt.size());
  OpeResult r;
  for (int t = 0; t < kPrecisionPoints; ++t) {
    r.precision[static_cast<std::size_t>(t)] =
        static_cast<double>(std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= t; })) / n;
  }
  double sum = 0;
  for (int i = 0; i < kSuccessPoints; ++i) {
    const double tau = success_threshold(i);
    const double s =
        static_cast<double>(std::count_if(overlaps.begin(), overlaps.end(), [&](double o) { return o > tau; })) / n;
    r.success[static_cast<std::size_t>(i)] = s;
    sum += s;
  }
  r.precision20 = r.precision[20];
  r.auc = sum / kSuccessPoints;
  return r;
}

OpeResult mean_result(const std::vector<OpeResult>& results) {
  OpeResult m;
  if (results.empty()) return m;
  const double n = static_cast<double>(results.size());
  for (const auto& r : results) {
    for (std::size_t i = 0; i < m.precision.size(); ++i) m.precision[i] += r.precision[i];
    for (std::size_t i = 0; i < m.success.size(); ++i) m.success[i] += r.success[i];
    m.precision20 += r.precision20;
    m.auc += r.auc;
  }
  for (auto& v : m.precision) v /= n;
  for (auto& v : m.success) v /= n;
  m.precision20 /= n;
  m.auc /= n;
  return m;
}

BenchmarkReport evaluate_benchmark(const std::vector<Sequence>& sequences, const fs::path& results_dir) {
  BenchmarkReport report;
  std::map<std::string, std::vector<OpeResult>> by_tag;
  std::vector<OpeResult> all;
  for (const Sequence& seq : sequences) {
    const fs::path file = results_dir / (seq.name + ".txt");
    if (!fs::exists(file)) {
      report.warnings.push_back("missing results for sequence " + seq.name + " (" + file.string() + ")");
      continue;
    }
    const auto boxes = read_boxes(file);
    if (boxes.size() != seq.size()) {
      throw DataError("sequence " + seq.name + ": results have " + std::to_string(boxes.size()) +
                      " boxes but the sequence has " + std::to_string(seq.size()) + " frames");
    }
    SequenceResult sr{seq.name, {seq.attributes.begin(), seq.attributes.end()}, ope_curves(boxes, seq.gt)};
    for (const auto& tag : seq.attributes) by_tag[tag].push_back(sr.ope);
    all.push_back(sr.ope);
    report.sequences.push_back(std::move(sr));
  }
  report.aggregate = mean_result(all);
  for (const auto& [tag, list] : by_tag) {
    report.attributes[tag] = {static_cast<int>(list.size()), mean_result(list)};
  }
  return report;
}

namespace {

nlohmann::json to_json(const OpeResult& r) {
  return {{"precision", r.precision},
          {"success", r.success},
          {"precision_at_20", r.precision20},
          {"success_auc", r.auc}};
}

void write_curves(const fs::path& dir, const std::string& stem, const OpeResult& r) {
  auto write = [&](const std::string& suffix, auto&& curve, auto&& threshold) {
    const fs::path p = dir / (stem + suffix);
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << "threshold,value\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << threshold(static_cast<int>(i)) << ',' << curve[i] << '\n';
  };
  write("_precision.csv", r.precision, [](int i) { return static_cast<double>(i); });
  write("_success.csv", r.success, success_threshold);
}

}  // namespace

void write_report(const fs::path& out_dir, const BenchmarkReport& report) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  nlohmann::json j;
  j["aggregate"] = to_json(report.aggregate);
  j["sequences"] = nlohmann::json::array();
  for (const auto& s : report.sequences) {
    nlohmann::json e = to_json(s.ope);
    e["name"] = s.name;
    e["attributes"] = s.attributes;
    j["sequences"].push_back(e);
    write_curves(out_dir, "seq_" + s.name, s.ope);
  }
  j["attributes"] = nlohmann::json::object();
  for (const auto& [tag, a] : report.attributes) {
    nlohmann::json e = to_json(a.ope);
    e["sequences"] = a.sequences;
    j["attributes"][tag] = e;
    write_curves(out_dir, "attr_" + tag, a.ope);
  }
  j["warnings"] = report.warnings;
  write_curves(out_dir, "aggregate", report.aggregate);
  const fs::path p = out_dir / "report.json";
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

}  // namespace prl
