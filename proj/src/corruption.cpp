#include "mmlnet/corruption.hpp"

#include <algorithm>
#include <fstream>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "mmlnet/core/rng.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::corruption {
namespace {

using nlohmann::json;

void check_rate(int rate, const std::string& sample_id) {
  if (rate < 0 || rate > 100) {
    throw DataError("masking rate " + std::to_string(rate) + " outside [0,100] for sample " +
                    sample_id);
  }
}

void check_sorted_set(const json& arr, const char* field, int line) {
  int prev = -1;
  for (const auto& v : arr) {
    if (!v.is_number_integer()) {
      throw DataError("mask file line " + std::to_string(line) + ": " + field +
                      " contains a non-integer");
    }
    const int x = v.get<int>();
    if (x < 0) {
      throw DataError("mask file line " + std::to_string(line) + ": " + field +
                      " contains a negative index");
    }
    if (x == prev) {
      throw DataError("mask file line " + std::to_string(line) + ": " + field +
                      " contains duplicate index " + std::to_string(x));
    }
    if (x < prev) {
      throw DataError("mask file line " + std::to_string(line) + ": " + field + " is not sorted");
    }
    prev = x;
  }
}

}  // namespace

int survivor_count(int count, int rate) {
  // Integer division is exactly floor(count * (1 - rate/100)) for
  // nonnegative operands.
  return static_cast<int>(static_cast<long long>(count) * (100 - rate) / 100);
}

std::pair<std::vector<std::string>, std::vector<int>> mask_text(
    const std::vector<std::string>& tokens, int rate, std::uint64_t seed,
    const std::string& sample_id) {
  if (tokens.empty()) throw DataError("mask_text: empty token list for sample " + sample_id);
  check_rate(rate, sample_id);
  const int m = static_cast<int>(tokens.size());
  const int removed_count = m - survivor_count(m, rate);
  Rng rng = Rng::stream(seed, "mask_text/" + sample_id);
  std::vector<int> removed = rng.sample_without_replacement(m, removed_count);
  return {apply_text_mask(tokens, removed), std::move(removed)};
}

std::pair<Matrix, std::vector<int>> mask_image_patches(const Matrix& image, int patch_size,
                                                       int rate, std::uint64_t seed,
                                                       const std::string& sample_id) {
  if (patch_size <= 0 || image.rows % patch_size != 0 || image.cols % patch_size != 0) {
    throw DataError("mask_image_patches: image " + std::to_string(image.rows) + "x" +
                    std::to_string(image.cols) + " not divisible by patch size " +
                    std::to_string(patch_size) + " for sample " + sample_id);
  }
  check_rate(rate, sample_id);
  const int n_patches = (image.rows / patch_size) * (image.cols / patch_size);
  const int masked_count = n_patches - survivor_count(n_patches, rate);
  Rng rng = Rng::stream(seed, "mask_image/" + sample_id);
  std::vector<int> masked = rng.sample_without_replacement(n_patches, masked_count);
  return {apply_image_mask(image, patch_size, masked), std::move(masked)};
}

std::vector<std::string> apply_text_mask(const std::vector<std::string>& tokens,
                                         const std::vector<int>& removed_word_indices) {
  std::vector<std::string> kept;
  kept.reserve(tokens.size() - removed_word_indices.size());
  std::size_t next = 0;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (next < removed_word_indices.size() && removed_word_indices[next] == i) {
      ++next;
    } else {
      kept.push_back(tokens[static_cast<std::size_t>(i)]);
    }
  }
  return kept;
}

Matrix apply_image_mask(const Matrix& image, int patch_size,
                        const std::vector<int>& masked_patch_indices) {
  Matrix out = image;
  const int patches_per_row = image.cols / patch_size;
  for (int p : masked_patch_indices) {
    const int r0 = (p / patches_per_row) * patch_size;
    const int c0 = (p % patches_per_row) * patch_size;
    for (int r = r0; r < r0 + patch_size; ++r) {
      double* row = out.row(r);
      for (int c = c0; c < c0 + patch_size; ++c) row[c] = 0.0;
    }
  }
  return out;
}

std::vector<MissingRates> scenario_grid() {
  std::vector<MissingRates> grid;
  for (int total = 100; total >= 25; total -= 25) {
    for (int text = 0; text <= total; text += 25) {
      grid.push_back({text, total - text});
    }
  }
  grid.push_back({0, 0});
  return grid;
}

std::string scenario_tag(MissingRates rates) {
  return "t" + std::to_string(rates.text_rate) + "_i" + std::to_string(rates.image_rate);
}

MissingRates parse_scenario_tag(const std::string& tag) {
  MissingRates rates;
  const auto bad = [&] { throw DataError("malformed scenario tag: " + tag); };
  const std::size_t sep = tag.find("_i");
  if (tag.empty() || tag[0] != 't' || sep == std::string::npos) bad();
  try {
    std::size_t used = 0;
    rates.text_rate = std::stoi(tag.substr(1, sep - 1), &used);
    if (used != sep - 1) bad();
    rates.image_rate = std::stoi(tag.substr(sep + 2), &used);
    if (used != tag.size() - sep - 2) bad();
  } catch (const std::logic_error&) {
    bad();
  }
  if (scenario_tag(rates) != tag) bad();
  if (rates.text_rate < 0 || rates.text_rate > 100 || rates.image_rate < 0 ||
      rates.image_rate > 100)
    bad();
  return rates;
}

void save_masks(const std::vector<MaskSpec>& specs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open mask file for writing: " + path);
  for (const MaskSpec& s : specs) {
    json rec{{"sample_id", s.sample_id},
             {"text_rate", s.rates.text_rate},
             {"image_rate", s.rates.image_rate},
             {"seed", s.seed},
             {"removed_word_indices", s.removed_word_indices},
             {"masked_patch_indices", s.masked_patch_indices}};
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("failed writing mask file: " + path);
}

std::vector<MaskSpec> load_masks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open mask file: " + path);
  std::vector<MaskSpec> specs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      throw DataError("mask file line " + std::to_string(lineno) + ": malformed record");
    }
    for (const char* field : {"sample_id", "text_rate", "image_rate", "seed",
                              "removed_word_indices", "masked_patch_indices"}) {
      if (!rec.contains(field)) {
        throw DataError("mask file line " + std::to_string(lineno) + ": missing field " + field);
      }
    }
    MaskSpec s;
    if (!rec["sample_id"].is_string() || !rec["text_rate"].is_number_integer() ||
        !rec["image_rate"].is_number_integer() || !rec["seed"].is_number() ||
        !rec["removed_word_indices"].is_array() || !rec["masked_patch_indices"].is_array()) {
      throw DataError("mask file line " + std::to_string(lineno) + ": field with wrong type");
    }
    s.sample_id = rec["sample_id"].get<std::string>();
    s.rates.text_rate = rec["text_rate"].get<int>();
    s.rates.image_rate = rec["image_rate"].get<int>();
    s.seed = rec["seed"].get<std::uint64_t>();
    if (s.rates.text_rate < 0 || s.rates.text_rate > 100 || s.rates.image_rate < 0 ||
        s.rates.image_rate > 100) {
      throw DataError("mask file line " + std::to_string(lineno) + ": rate outside [0,100]");
    }
    check_sorted_set(rec["removed_word_indices"], "removed_word_indices", lineno);
    check_sorted_set(rec["masked_patch_indices"], "masked_patch_indices", lineno);
    s.removed_word_indices = rec["removed_word_indices"].get<std::vector<int>>();
    s.masked_patch_indices = rec["masked_patch_indices"].get<std::vector<int>>();
    specs.push_back(std::move(s));
  }
  return specs;
}

std::pair<std::vector<datasets::Sample>, std::vector<MaskSpec>> corrupt_dataset(
    const std::vector<datasets::Sample>& samples, MissingRates rates, std::uint64_t seed,
    int patch_size) {
  std::vector<datasets::Sample> masked;
  std::vector<MaskSpec> specs;
  masked.reserve(samples.size());
  specs.reserve(samples.size());
  for (const datasets::Sample& s : samples) {
    MaskSpec spec;
    spec.sample_id = s.id;
    spec.rates = rates;
    spec.seed = seed;
    datasets::Sample out = s;
    std::tie(out.tokens, spec.removed_word_indices) =
        mask_text(s.tokens, rates.text_rate, seed, s.id);
    std::tie(out.image, spec.masked_patch_indices) =
        mask_image_patches(s.image, patch_size, rates.image_rate, seed, s.id);
    masked.push_back(std::move(out));
    specs.push_back(std::move(spec));
  }
  return {std::move(masked), std::move(specs)};
}

std::vector<datasets::Sample> apply_masks(const std::vector<datasets::Sample>& samples,
                                          const std::vector<MaskSpec>& masks, int patch_size) {
  if (samples.size() != masks.size())
    throw DataError("apply_masks: " + std::to_string(masks.size()) + " masks for " +
                    std::to_string(samples.size()) + " samples");
  std::unordered_map<std::string, const MaskSpec*> by_id;
  for (const MaskSpec& m : masks) {
    if (!by_id.emplace(m.sample_id, &m).second)
      throw DataError("apply_masks: duplicate mask for sample " + m.sample_id);
  }
  std::vector<datasets::Sample> out;
  out.reserve(samples.size());
  for (const datasets::Sample& s : samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw DataError("apply_masks: no mask for sample " + s.id);
    const MaskSpec& m = *it->second;
    datasets::Sample masked = s;
    masked.tokens = apply_text_mask(s.tokens, m.removed_word_indices);
    masked.image = apply_image_mask(s.image, patch_size, m.masked_patch_indices);
    out.push_back(std::move(masked));
  }
  return out;
}

}  // namespace mmlnet::corruption
