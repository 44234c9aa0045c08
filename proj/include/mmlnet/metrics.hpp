#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmlnet/corruption.hpp"
#include "mmlnet/datasets.hpp"
#include "mmlnet/model.hpp"

namespace mmlnet::metrics {

/// Fraction of exact matches.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Unweighted mean of per-class F1 over the classes present in the labels;
/// zero-denominator F1 counts as 0.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Pairwise rank estimator: (correctly ordered positive-negative pairs +
/// 0.5 * ties) / (P * N), computed through midranks. Needs both classes.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// One scenario's evaluation result.
struct MetricsReport {
  corruption::MissingRates scenario;
  double acc = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;
  int n_samples = 0;
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const MetricsReport&) const = default;
};

/// Applies the stored masks to the dataset and scores the model on it:
/// predicted label = argmax of the routed distribution, AUC from its class-1
/// probability. Masks must match the scenario and cover the dataset exactly.
MetricsReport evaluate(const model::MmlNet& net, const std::vector<datasets::Sample>& dataset,
                       const std::vector<corruption::MaskSpec>& masks,
                       corruption::MissingRates scenario);

/// One grid row of a sweep; the report is absent when no checkpoint was
/// available for that scenario.
struct SweepRow {
  corruption::MissingRates scenario;
  std::optional<MetricsReport> report;
};

/// Evaluates one checkpoint per grid scenario (keyed by scenario_tag) over
/// the dataset, regenerating each scenario's masks from `seed`. Scenarios
/// without a checkpoint stay in the output, marked absent.
std::vector<SweepRow> sweep(const std::map<std::string, std::string>& checkpoint_by_tag,
                            const std::vector<datasets::Sample>& dataset, std::uint64_t seed);

/// Aligned table in the grid layout: Missing Rate, Text, Image, ACC, M-F1,
/// AUC; the complete row prints "-" rates and sits last.
std::string render_table(const std::vector<SweepRow>& rows);

/// Machine-readable tab-separated form of the same rows.
std::string render_tsv(const std::vector<SweepRow>& rows);

/// JSONL persistence for reports.
void save_reports(const std::string& path, const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> load_reports(const std::string& path);

/// Merges reports from several runs into grid order. Identical duplicates
/// collapse; conflicting metrics for one scenario are an error naming it.
/// Scenarios nobody measured come back absent.
std::vector<SweepRow> merge_reports(const std::vector<MetricsReport>& reports);

}  // namespace mmlnet::metrics
