#include "mmlnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mmlnet/checkpoint.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions for " +
                    std::to_string(b) + " labels");
  if (a == 0) throw DataError(std::string(what) + ": empty input");
}

void check_binary(const std::vector<int>& xs, const char* what) {
  for (int x : xs)
    if (x != 0 && x != 1) throw DataError(std::string(what) + ": non-binary value");
}

std::string format_metric(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  check_lengths(predictions.size(), labels.size(), "accuracy");
  int hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  check_lengths(predictions.size(), labels.size(), "macro_f1");
  check_binary(predictions, "macro_f1");
  check_binary(labels, "macro_f1");
  double sum = 0.0;
  int scored = 0;
  for (int c = 0; c < 2; ++c) {
    int tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      support += labels[i] == c;
      tp += predictions[i] == c && labels[i] == c;
      fp += predictions[i] == c && labels[i] != c;
      fn += predictions[i] != c && labels[i] == c;
    }
    if (support == 0) continue;  // class never occurs: skipped, not zeroed
    ++scored;
    // F1 = 2tp / (2tp + fp + fn); a zero denominator counts as 0.
    const int denom = 2 * tp + fp + fn;
    if (denom > 0) sum += 2.0 * tp / denom;
  }
  return sum / scored;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_lengths(scores.size(), labels.size(), "auc");
  check_binary(labels, "auc");
  const std::size_t n = labels.size();
  long long pos = std::count(labels.begin(), labels.end(), 1);
  long long neg = static_cast<long long>(n) - pos;
  if (pos == 0 || neg == 0)
    throw DataError("auc: only one class present, AUC undefined");

  // Midrank formulation of the pairwise estimator: AUC =
  // (sum of positive ranks - P(P+1)/2) / (P*N), ties sharing average ranks.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  return (pos_rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

MetricsReport evaluate(const model::MmlNet& net, const std::vector<datasets::Sample>& dataset,
                       const std::vector<corruption::MaskSpec>& masks,
                       corruption::MissingRates scenario) {
  for (const auto& m : masks) {
    if (!(m.rates == scenario))
      throw DataError("evaluate: mask for sample " + m.sample_id + " carries rates (" +
                      std::to_string(m.rates.text_rate) + "," +
                      std::to_string(m.rates.image_rate) + "), scenario is (" +
                      std::to_string(scenario.text_rate) + "," +
                      std::to_string(scenario.image_rate) + ")");
  }
  const auto masked = corruption::apply_masks(dataset, masks, net.config().patch_size);

  std::vector<int> predictions, labels;
  std::vector<double> scores;
  predictions.reserve(masked.size());
  for (const datasets::Sample& s : masked) {
    const model::ExpertBundle b = net.forward(s);
    predictions.push_back(b.y_o(0, 1) > b.y_o(0, 0) ? 1 : 0);
    scores.push_back(b.y_o(0, 1));
    labels.push_back(s.label);
  }

  MetricsReport report;
  report.scenario = scenario;
  report.acc = accuracy(predictions, labels);
  report.macro_f1 = macro_f1(predictions, labels);
  report.auc = auc(scores, labels);
  report.n_samples = static_cast<int>(masked.size());
  report.config_hash = config::config_hash(net.config());
  report.seed = net.config().seed;
  return report;
}

std::vector<SweepRow> sweep(const std::map<std::string, std::string>& checkpoint_by_tag,
                            const std::vector<datasets::Sample>& dataset, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (const corruption::MissingRates scenario : corruption::scenario_grid()) {
    SweepRow row{scenario, std::nullopt};
    auto it = checkpoint_by_tag.find(corruption::scenario_tag(scenario));
    if (it != checkpoint_by_tag.end()) {
      checkpoint::CheckpointData data = checkpoint::read(it->second);
      model::MmlNet net(data.config);
      checkpoint::restore(data, net.params(), data.config_hash);
      auto [masked, masks] = corruption::corrupt_dataset(dataset, scenario, seed,
                                                         data.config.patch_size);
      row.report = evaluate(net, dataset, masks, scenario);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_table(const std::vector<SweepRow>& rows) {
  const std::vector<std::string> headers = {"Missing Rate", "Text", "Image",
                                            "ACC",          "M-F1", "AUC"};
  std::vector<std::vector<std::string>> cells;
  for (const SweepRow& row : rows) {
    const int total = row.scenario.text_rate + row.scenario.image_rate;
    std::vector<std::string> line;
    if (total == 0) {
      line = {"-", "-", "-"};
    } else {
      line = {std::to_string(total) + "%", std::to_string(row.scenario.text_rate) + "%",
              std::to_string(row.scenario.image_rate) + "%"};
    }
    if (row.report) {
      line.push_back(format_metric(row.report->acc));
      line.push_back(format_metric(row.report->macro_f1));
      line.push_back(format_metric(row.report->auc));
    } else {
      line.insert(line.end(), {"absent", "absent", "absent"});
    }
    cells.push_back(std::move(line));
  }

  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  const auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      out << line[c] << std::string(width[c] - line[c].size(), ' ');
    }
    out << '\n';
  };
  emit(headers);
  for (const auto& line : cells) emit(line);
  return out.str();
}

std::string render_tsv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "text_missing\timage_missing\tstatus\tacc\tmacro_f1\tauc\tn_samples\tconfig_hash\tseed\n";
  for (const SweepRow& row : rows) {
    out << row.scenario.text_rate << '\t' << row.scenario.image_rate << '\t';
    if (row.report) {
      out << "present\t" << format_exact(row.report->acc) << '\t'
          << format_exact(row.report->macro_f1) << '\t' << format_exact(row.report->auc) << '\t'
          << row.report->n_samples << '\t' << row.report->config_hash << '\t'
          << row.report->seed;
    } else {
      out << "absent\t\t\t\t\t\t";
    }
    out << '\n';
  }
  return out.str();
}

void save_reports(const std::string& path, const std::vector<MetricsReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("reports: cannot open " + path + " for writing");
  for (const MetricsReport& r : reports) {
    nlohmann::json rec = {
        {"text_missing", r.scenario.text_rate},
        {"image_missing", r.scenario.image_rate},
        {"acc", r.acc},
        {"macro_f1", r.macro_f1},
        {"auc", r.auc},
        {"n_samples", r.n_samples},
        {"config_hash", r.config_hash},
        {"seed", r.seed},
    };
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("reports: write to " + path + " failed");
}

std::vector<MetricsReport> load_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("reports: cannot open " + path);
  std::vector<MetricsReport> reports;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError("reports " + path + " line " + std::to_string(lineno) + ": not valid JSON");
    }
    const auto need = [&](const char* key) -> const nlohmann::json& {
      if (!rec.contains(key))
        throw DataError("reports " + path + " line " + std::to_string(lineno) +
                        ": missing field " + key);
      return rec[key];
    };
    MetricsReport r;
    r.scenario.text_rate = need("text_missing").get<int>();
    r.scenario.image_rate = need("image_missing").get<int>();
    r.acc = need("acc").get<double>();
    r.macro_f1 = need("macro_f1").get<double>();
    r.auc = need("auc").get<double>();
    r.n_samples = need("n_samples").get<int>();
    r.config_hash = need("config_hash").get<std::string>();
    r.seed = need("seed").get<std::uint64_t>();
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<SweepRow> merge_reports(const std::vector<MetricsReport>& reports) {
  std::unordered_map<std::string, MetricsReport> by_tag;
  for (const MetricsReport& r : reports) {
    const std::string tag = corruption::scenario_tag(r.scenario);
    auto [it, inserted] = by_tag.emplace(tag, r);
    if (!inserted && !(it->second == r))
      throw DataError("report merge: conflicting results for scenario " + tag);
  }
  std::vector<SweepRow> rows;
  for (const corruption::MissingRates scenario : corruption::scenario_grid()) {
    SweepRow row{scenario, std::nullopt};
    auto it = by_tag.find(corruption::scenario_tag(scenario));
    if (it != by_tag.end()) {
      row.report = it->second;
      by_tag.erase(it);
    }
    rows.push_back(std::move(row));
  }
  // Off-grid scenarios (custom rates) follow the grid block, largest total
  // missingness first to match the grid's reading order.
  std::vector<MetricsReport> extra;
  for (auto& [tag, r] : by_tag) extra.push_back(r);
  std::sort(extra.begin(), extra.end(), [](const MetricsReport& a, const MetricsReport& b) {
    const int ta = a.scenario.text_rate + a.scenario.image_rate;
    const int tb = b.scenario.text_rate + b.scenario.image_rate;
    if (ta != tb) return ta > tb;
    return a.scenario.text_rate < b.scenario.text_rate;
  });
  for (MetricsReport& r : extra) rows.push_back(SweepRow{r.scenario, std::move(r)});
  return rows;
}

}  // namespace mmlnet::metrics
