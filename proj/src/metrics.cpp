#include "npseg/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "npseg/error.hpp"
#include "npseg/parallel.hpp"

namespace npseg {

Mask binarize(const FloatImage& prob, double threshold) {
  Mask out(prob.width, prob.height);
  for (std::size_t i = 0; i < prob.data.size(); ++i) {
    out.data[i] = prob.data[i] >= threshold ? 1 : 0;
  }
  return out;
}

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw Error(ErrorCode::ShapeMismatch,
                "prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                    " vs ground truth " + std::to_string(gt.width) + "x" +
                    std::to_string(gt.height));
  }
  // Index by (pred << 1 | gt) and read the four cells back out.
  std::array<std::uint64_t, 4> cell{};
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    ++cell[(pred.data[i] ? 2u : 0u) | (gt.data[i] ? 1u : 0u)];
  }
  return {cell[3], cell[2], cell[1], cell[0]};
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

Scores segmentation_scores(const ConfusionCounts& c, double smooth) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return {1.0, 1.0, 1.0, 1.0};
  const double tp = static_cast<double>(c.tp);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  Scores s;
  s.precision = ratio(tp + smooth, tp + fp + smooth);
  s.recall = ratio(tp + smooth, tp + fn + smooth);
  s.dice = ratio(2.0 * tp + smooth, 2.0 * tp + fp + fn + smooth);
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

std::string_view to_string(Granularity g) {
  return g == Granularity::pooled ? "pooled" : "per_patch_mean";
}

Granularity granularity_from_string(std::string_view s) {
  if (s == "pooled") return Granularity::pooled;
  if (s == "per_patch_mean") return Granularity::per_patch_mean;
  throw Error(ErrorCode::ParseError, "unknown granularity '" + std::string(s) + "'");
}

Scores score_split(std::span<const MaskPair> pairs, Granularity granularity, double smooth,
                   int workers) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no patches to score");
  std::vector<ConfusionCounts> counts(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i, int) {
    counts[i] = confusion_counts(pairs[i].pred, pairs[i].gt);
  });
  if (granularity == Granularity::pooled) {
    ConfusionCounts total;
    for (const auto& c : counts) total += c;
    return segmentation_scores(total, smooth);
  }
  Scores mean;
  for (const auto& c : counts) {
    const Scores s = segmentation_scores(c, smooth);
    mean.dice += s.dice;
    mean.f1 += s.f1;
    mean.recall += s.recall;
    mean.precision += s.precision;
  }
  const double n = static_cast<double>(counts.size());
  mean.dice /= n;
  mean.f1 /= n;
  mean.recall /= n;
  mean.precision /= n;
  return mean;
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::bce: return "bce";
    case LossKind::dice_loss: return "dice_loss";
    case LossKind::bce_dice: return "bce_dice";
    case LossKind::focal: return "focal";
  }
  return "bce";
}

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "bce") return LossKind::bce;
  if (s == "dice_loss" || s == "dice") return LossKind::dice_loss;
  if (s == "bce_dice") return LossKind::bce_dice;
  if (s == "focal") return LossKind::focal;
  throw Error(ErrorCode::ParseError, "unknown loss kind '" + std::string(s) + "'");
}

double loss_value(LossKind kind, std::span<const double> prob, std::span<const std::uint8_t> gt,
                  const LossParams& params) {
  if (prob.size() != gt.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(prob.size()) + " probabilities vs " +
                                              std::to_string(gt.size()) + " labels");
  }
  if (prob.empty()) throw Error(ErrorCode::EmptyInput, "empty probability map");
  const double eps = params.eps;
  const double n = static_cast<double>(prob.size());
  auto clamp = [eps](double p) { return std::clamp(p, eps, 1.0 - eps); };

  switch (kind) {
    case LossKind::bce: {
      double sum = 0.0;
      for (std::size_t i = 0; i < prob.size(); ++i) {
        const double p = clamp(prob[i]);
        sum -= gt[i] ? std::log(p) : std::log(1.0 - p);
      }
      return sum / n;
    }
    case LossKind::dice_loss: {
      double inter = 0.0, sp = 0.0, sg = 0.0;
      for (std::size_t i = 0; i < prob.size(); ++i) {
        const double p = clamp(prob[i]);
        const double g = gt[i] ? 1.0 : 0.0;
        inter += p * g;
        sp += p;
        sg += g;
      }
      return std::max(0.0, 1.0 - (2.0 * inter + eps) / (sp + sg + eps));
    }
    case LossKind::bce_dice:
      return params.bce_weight * loss_value(LossKind::bce, prob, gt, params) +
             (1.0 - params.bce_weight) * loss_value(LossKind::dice_loss, prob, gt, params);
    case LossKind::focal: {
      double sum = 0.0;
      for (std::size_t i = 0; i < prob.size(); ++i) {
        const double p = clamp(prob[i]);
        const double pt = gt[i] ? p : 1.0 - p;
        sum -= params.focal_alpha * std::pow(1.0 - pt, params.focal_gamma) * std::log(pt);
      }
      return sum / n;
    }
  }
  return 0.0;
}

double loss_value(LossKind kind, const FloatImage& prob, const Mask& gt,
                  const LossParams& params) {
  if (prob.width != gt.width || prob.height != gt.height) {
    throw Error(ErrorCode::ShapeMismatch, "probability map and mask differ in shape");
  }
  return loss_value(kind, prob.data, gt.data, params);
}

std::vector<std::string> column_names(bool with_test) {
  std::vector<std::string> out;
  for (const char* prefix : {"dev_", "test_"}) {
    if (std::string_view(prefix) == "test_" && !with_test) break;
    for (auto name : kScoreNames) out.push_back(prefix + std::string(name));
  }
  return out;
}

const ColumnStats& AggregateStats::column(std::string_view name) const {
  for (const auto& c : columns) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::InvalidRecord, "no column '" + std::string(name) + "'");
}

namespace {

std::array<double, 4> as_array(const Scores& s) { return {s.dice, s.f1, s.recall, s.precision}; }

Scores from_array(const double* v) { return {v[0], v[1], v[2], v[3]}; }

std::vector<double> row_values(const MetricsRecord& r) {
  std::vector<double> out;
  for (double v : as_array(r.dev)) out.push_back(v);
  if (r.test) {
    for (double v : as_array(*r.test)) out.push_back(v);
  }
  return out;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  // -0.0000 reads oddly in a table; a tiny negative rounds to plain zero.
  if (std::string_view(buf) == "-0.0000") return "0.0000";
  return buf;
}

}  // namespace

AggregateStats aggregate_records(std::span<const MetricsRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no metrics records to aggregate");
  const bool with_test = records.front().test.has_value();
  for (const auto& r : records) {
    if (r.test.has_value() != with_test) {
      throw Error(ErrorCode::RaggedColumns,
                  "record '" + r.fold_name + "' differs in test-column presence");
    }
    for (double v : row_values(r)) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorCode::InvalidRecord,
                    "record '" + r.fold_name + "' has a score outside [0, 1]");
      }
    }
  }

  const auto names = column_names(with_test);
  AggregateStats stats;
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<double> col;
    for (const auto& r : records) col.push_back(row_values(r)[c]);
    // Sorting makes the sums independent of record order.
    std::sort(col.begin(), col.end());
    const double n = static_cast<double>(col.size());
    double sum = 0.0;
    for (double v : col) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    stats.columns.push_back({names[c], mean, std::sqrt(ss / n), col.back(), col.front()});
  }
  return stats;
}

std::string format_table(std::span<const MetricsRecord> records, const AggregateStats& stats) {
  const bool with_test = stats.has_test();
  std::string out = "fold_name";
  for (const auto& name : column_names(with_test)) out += "," + name;
  out += "\n";

  std::vector<const MetricsRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](auto* a, auto* b) { return a->fold_name < b->fold_name; });
  for (const auto* r : sorted) {
    if (r->test.has_value() != with_test) {
      throw Error(ErrorCode::RaggedColumns, "record '" + r->fold_name + "' does not fit table");
    }
    out += r->fold_name;
    for (double v : row_values(*r)) out += "," + fixed4(v);
    out += "\n";
  }
  const std::pair<const char*, double ColumnStats::*> stat_rows[] = {
      {"mean", &ColumnStats::mean},
      {"std", &ColumnStats::std},
      {"max", &ColumnStats::max},
      {"min", &ColumnStats::min},
  };
  for (const auto& [label, member] : stat_rows) {
    out += label;
    for (const auto& c : stats.columns) out += "," + fixed4(c.*member);
    out += "\n";
  }
  return out;
}

void emit_table(std::span<const MetricsRecord> records, const AggregateStats& stats,
                const std::filesystem::path& path) {
  const std::string text = format_table(records, stats);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, int line_no) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::ParseError,
                "table line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

ParsedTable parse_table(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) header = split_csv(line);
  }
  if (header.empty()) throw Error(ErrorCode::ParseError, "empty metrics table");
  const bool with_test = header.size() == 9;
  std::vector<std::string> expected{"fold_name"};
  for (const auto& n : column_names(with_test)) expected.push_back(n);
  if (header != expected) {
    throw Error(ErrorCode::ParseError, "unexpected metrics table header");
  }

  ParsedTable table;
  AggregateStats stats;
  for (const auto& n : column_names(with_test)) stats.columns.push_back({n});
  int stat_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::RaggedColumns,
                  "table line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells");
    }
    std::vector<double> v;
    for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(parse_number(cells[i], line_no));
    const std::string& label = cells[0];
    double ColumnStats::*member = nullptr;
    if (label == "mean") member = &ColumnStats::mean;
    else if (label == "std") member = &ColumnStats::std;
    else if (label == "max") member = &ColumnStats::max;
    else if (label == "min") member = &ColumnStats::min;
    if (member) {
      for (std::size_t c = 0; c < v.size(); ++c) stats.columns[c].*member = v[c];
      ++stat_rows;
      continue;
    }
    MetricsRecord r;
    r.fold_name = label;
    r.dev = from_array(v.data());
    if (with_test) r.test = from_array(v.data() + 4);
    table.records.push_back(std::move(r));
  }
  if (stat_rows == 4) table.stats = std::move(stats);
  return table;
}

ParsedTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str());
}

}  // namespace npseg
