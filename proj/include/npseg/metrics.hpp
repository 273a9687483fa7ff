#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npseg/image.hpp"

namespace npseg {

Mask binarize(const FloatImage& prob, double threshold = 0.5);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt);

// Column order matches the published tables: dice, f1, recall, precision.
struct Scores {
  double dice = 0.0;
  double f1 = 0.0;
  double recall = 0.0;
  double precision = 0.0;

  bool operator==(const Scores&) const = default;
};

// tp = fp = fn = 0 scores 1.0 everywhere. Any other zero denominator gives 0.
Scores segmentation_scores(const ConfusionCounts& c, double smooth = 0.0);

enum class Granularity { pooled, per_patch_mean };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

struct MaskPair {
  Mask pred;
  Mask gt;
};

// pooled: scores of the summed counts. per_patch_mean: mean of per-patch scores.
Scores score_split(std::span<const MaskPair> pairs, Granularity granularity,
                   double smooth = 0.0, int workers = 1);

enum class LossKind { bce, dice_loss, bce_dice, focal };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view s);

struct LossParams {
  double bce_weight = 0.5;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double eps = 1e-7;
};

// Probabilities are clamped to [eps, 1 - eps]; logs are natural.
double loss_value(LossKind kind, std::span<const double> prob, std::span<const std::uint8_t> gt,
                  const LossParams& params = {});
double loss_value(LossKind kind, const FloatImage& prob, const Mask& gt,
                  const LossParams& params = {});

struct MetricsRecord {
  std::string fold_name;
  Scores dev;
  std::optional<Scores> test;  // absent in scanner mode

  bool operator==(const MetricsRecord&) const = default;
};

inline constexpr std::array<std::string_view, 4> kScoreNames{"dice", "f1", "recall", "precision"};

// "dev_dice", ..., "test_precision" for the columns a record set carries.
std::vector<std::string> column_names(bool with_test);

struct ColumnStats {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // population, divides by n
  double max = 0.0;
  double min = 0.0;
};

struct AggregateStats {
  std::vector<ColumnStats> columns;

  const ColumnStats& column(std::string_view name) const;
  bool has_test() const { return columns.size() == 8; }
};

// Throws EmptyInput for no records and RaggedColumns when only some carry test
// scores. Values outside [0, 1] raise InvalidRecord.
AggregateStats aggregate_records(std::span<const MetricsRecord> records);

// Rows sorted by fold name, then mean/std/max/min; four decimals.
std::string format_table(std::span<const MetricsRecord> records, const AggregateStats& stats);
void emit_table(std::span<const MetricsRecord> records, const AggregateStats& stats,
                const std::filesystem::path& path);

struct ParsedTable {
  std::vector<MetricsRecord> records;
  // Stat rows when present in the file.
  std::optional<AggregateStats> stats;
};

ParsedTable parse_table(std::string_view csv);
ParsedTable read_table(const std::filesystem::path& path);

}  // namespace npseg
