#include "mmlnet/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mmlnet/core/rng.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::config {
namespace {

// Single source of truth for the config schema: every operation (parse,
// serialize, hash, override) walks the same field list.
template <typename Cfg, typename V>
void visit_fields(Cfg& c, V&& v) {
  v("model", "backend", c.backend);
  v("model", "d", c.d);
  v("model", "layers", c.layers);
  v("model", "heads", c.heads);
  v("model", "vocab_size", c.vocab_size);
  v("model", "patch_size", c.patch_size);
  v("model", "image_side", c.image_side);
  v("model", "adapter_alpha", c.adapter_alpha);
  v("model", "adapter_hidden", c.adapter_hidden);
  v("model", "proj_dim", c.proj_dim);

  v("loss", "tau", c.tau);
  v("loss", "lambda_c", c.lambda_c);
  v("loss", "lambda_m", c.lambda_m);
  v("loss", "include_positive_in_denominator", c.include_positive_in_denominator);

  v("train", "seed", c.seed);
  v("train", "epochs", c.epochs);
  v("train", "batch_size", c.batch_size);
  v("train", "lr_main", c.lr_main);
  v("train", "lr_encoder", c.lr_encoder);
  v("train", "weight_decay", c.weight_decay);
  v("train", "dropout", c.dropout);
  v("train", "grad_clip", c.grad_clip);
  v("train", "val_fraction", c.val_fraction);
  v("train", "ablation", c.ablation);

  v("data", "text_missing", c.rates.text_rate);
  v("data", "image_missing", c.rates.image_rate);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_value(const std::string& v) { return v; }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string format_value(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += v[i];
  }
  return out;
}

void parse_value(const std::string& text, const std::string& where, std::string& out) {
  if (text.empty()) throw ConfigError(where + ": empty value");
  out = text;
}
void parse_value(const std::string& text, const std::string& where, int& out) {
  char* end = nullptr;
  const long v = std::strtol(text.c_str(), &end, 10);
  if (end == text.c_str() || *end != '\0') throw ConfigError(where + ": not an integer: " + text);
  out = static_cast<int>(v);
}
void parse_value(const std::string& text, const std::string& where, std::uint64_t& out) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (end == text.c_str() || *end != '\0') throw ConfigError(where + ": not an integer: " + text);
  out = v;
}
void parse_value(const std::string& text, const std::string& where, double& out) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') throw ConfigError(where + ": not a number: " + text);
  out = v;
}
void parse_value(const std::string& text, const std::string& where, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw ConfigError(where + ": not a boolean (true/false): " + text);
  }
}
void parse_value(const std::string& text, const std::string& where,
                 std::vector<std::string>& out) {
  out.clear();
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  (void)where;
}

const std::vector<std::string> kSections = {"model", "loss", "train", "data"};

}  // namespace

bool ExperimentConfig::has_ablation(const std::string& toggle) const {
  return std::find(ablation.begin(), ablation.end(), toggle) != ablation.end();
}

const std::vector<std::string>& allowed_ablations() {
  static const std::vector<std::string> toggles = {
      "drop_Lc_h", "drop_Lc_r", "drop_Lc_f",    "drop_Lm_h",      "drop_Lm_r",
      "drop_Lm_f", "drop_adapters", "drop_weighting", "vanilla_mcl"};
  return toggles;
}

std::string ablation_label(const std::string& toggle) {
  if (toggle == "drop_adapters") return "w/o A";
  if (toggle == "drop_weighting") return "w/o Weight";
  if (toggle == "vanilla_mcl") return "w/o MML, w/ MCL";
  if (toggle.rfind("drop_", 0) == 0) return "w/o " + toggle.substr(5);
  return toggle;
}

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section + "." + key;
    if (entries.count(full)) throw ConfigError(where + ": duplicate key " + full);
    entries[full] = trim(line.substr(eq + 1));
  }

  ExperimentConfig cfg;
  std::set<std::string> consumed;
  visit_fields(cfg, [&](const char* sec, const char* key, auto& field) {
    const std::string full = std::string(sec) + "." + key;
    auto it = entries.find(full);
    if (it == entries.end()) return;
    parse_value(it->second, full, field);
    consumed.insert(full);
  });
  for (const auto& [key, value] : entries) {
    if (!consumed.count(key)) throw ConfigError("unknown config key: " + key);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string serialize_config(const ExperimentConfig& config) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_section;
  // visit_fields takes a non-const reference; serialization does not mutate.
  auto& mutable_config = const_cast<ExperimentConfig&>(config);
  visit_fields(mutable_config, [&](const char* sec, const char* key, auto& field) {
    by_section[sec].emplace_back(key, format_value(field));
  });
  std::string out;
  for (const std::string& sec : kSections) {
    out += "[" + sec + "]\n";
    for (const auto& [key, value] : by_section[sec]) out += key + " = " + value + "\n";
    out += "\n";
  }
  return out;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open config for writing: " + path);
  out << serialize_config(config);
  if (!out) throw ConfigError("failed writing config: " + path);
}

ExperimentConfig apply_overrides(ExperimentConfig config,
                                 const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + o);
    std::string key = trim(o.substr(0, eq));
    const std::string value = trim(o.substr(eq + 1));
    std::string section;
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      section = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    int hits = 0;
    visit_fields(config, [&](const char* sec, const char* k, auto& field) {
      if (k != key) return;
      if (!section.empty() && section != sec) return;
      parse_value(value, "override " + o, field);
      ++hits;
    });
    if (hits == 0) throw ConfigError("override names unknown config key: " + o);
    if (hits > 1) throw ConfigError("override key is ambiguous, qualify with section: " + o);
  }
  validate(config);
  return config;
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
  if (c.backend != "toy" && c.backend != "external") fail("backend must be toy or external");
  if (c.d < 2) fail("d must be at least 2");
  if (c.layers < 1) fail("layers must be at least 1");
  if (c.heads < 1 || c.d % c.heads != 0) fail("heads must divide d");
  if (c.vocab_size < 2) fail("vocab_size must be at least 2");
  if (c.patch_size < 1 || c.image_side < 1 || c.image_side % c.patch_size != 0) {
    fail("image_side must be divisible by patch_size");
  }
  if (c.adapter_alpha < 0.0 || c.adapter_alpha > 1.0) fail("adapter_alpha must be in [0,1]");
  if (c.adapter_hidden < 0) fail("adapter_hidden must be nonnegative (0 = d/4)");
  if (c.proj_dim < 0) fail("proj_dim must be nonnegative (0 = d/2)");
  if (c.effective_adapter_hidden() < 1) fail("effective adapter hidden dim must be at least 1");
  if (c.effective_proj_dim() < 1) fail("effective projection dim must be at least 1");
  if (c.tau <= 0.0) fail("tau must be positive");
  if (c.lambda_c < 0.0 || c.lambda_m < 0.0) fail("loss weights must be nonnegative");
  if (c.epochs < 0) fail("epochs must be nonnegative");
  if (c.batch_size < 2) fail("batch_size must be at least 2 (contrastive pairs)");
  if (c.lr_main <= 0.0 || c.lr_encoder <= 0.0) fail("learning rates must be positive");
  if (c.weight_decay < 0.0) fail("weight_decay must be nonnegative");
  if (c.dropout < 0.0 || c.dropout >= 1.0) fail("dropout must be in [0,1)");
  if (c.grad_clip < 0.0) fail("grad_clip must be nonnegative (0 = off)");
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) fail("val_fraction must be in [0,1)");
  for (const std::string& t : c.ablation) {
    const auto& allowed = allowed_ablations();
    if (std::find(allowed.begin(), allowed.end(), t) == allowed.end()) {
      std::string msg = "unknown ablation toggle '" + t + "'; valid toggles:";
      for (const auto& a : allowed) msg += " " + a;
      fail(msg);
    }
  }
  if (c.rates.text_rate < 0 || c.rates.text_rate > 100 || c.rates.image_rate < 0 ||
      c.rates.image_rate > 100) {
    fail("missing rates must be in [0,100]");
  }
}

std::string config_hash(const ExperimentConfig& config) {
  std::vector<std::string> lines;
  auto& mutable_config = const_cast<ExperimentConfig&>(config);
  visit_fields(mutable_config, [&](const char* sec, const char* key, auto& field) {
    lines.push_back(std::string(sec) + "." + key + "=" + format_value(field));
  });
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& line : lines) {
    h = fnv1a64(line, h);
    h = fnv1a64("\n", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mmlnet::config
