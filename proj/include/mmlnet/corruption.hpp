#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmlnet/core/matrix.hpp"
#include "mmlnet/datasets.hpp"

namespace mmlnet::corruption {

/// Percent of each modality removed. Grid scenarios additionally satisfy
/// text_rate + image_rate ∈ {0,25,50,75,100}.
struct MissingRates {
  int text_rate = 0;
  int image_rate = 0;

  bool operator==(const MissingRates&) const = default;
};

/// Frozen corruption of one sample: which words and which patches are gone.
struct MaskSpec {
  std::string sample_id;
  MissingRates rates;
  std::uint64_t seed = 0;
  std::vector<int> removed_word_indices;   // sorted, duplicate-free
  std::vector<int> masked_patch_indices;   // sorted, duplicate-free

  bool operator==(const MaskSpec&) const = default;
};

/// floor(count * (1 - rate/100)): how many items survive a masking rate.
/// Higher rate never keeps more items.
int survivor_count(int count, int rate);

/// Removes exactly count-survivor_count words, chosen by the per-sample
/// stream derived from (seed, sample_id). Survivors keep their order.
std::pair<std::vector<std::string>, std::vector<int>> mask_text(
    const std::vector<std::string>& tokens, int rate, std::uint64_t seed,
    const std::string& sample_id);

/// Zero-fills masked patches of a grayscale image (rows x cols pixel grid).
/// Patch indices run row-major over the patch grid.
std::pair<Matrix, std::vector<int>> mask_image_patches(const Matrix& image, int patch_size,
                                                       int rate, std::uint64_t seed,
                                                       const std::string& sample_id);

/// Applies an already-computed mask spec (used when masks were pre-stored).
std::vector<std::string> apply_text_mask(const std::vector<std::string>& tokens,
                                         const std::vector<int>& removed_word_indices);
Matrix apply_image_mask(const Matrix& image, int patch_size,
                        const std::vector<int>& masked_patch_indices);

/// The 15 evaluation scenarios: all pairs with total missing rate in
/// {25,50,75,100} ordered by descending total then ascending text rate,
/// with the complete pair (0,0) last.
std::vector<MissingRates> scenario_grid();

/// Short file-system tag for a scenario, e.g. (25,75) -> "t25_i75".
std::string scenario_tag(MissingRates rates);

/// Inverse of scenario_tag; malformed tags are invalid input.
MissingRates parse_scenario_tag(const std::string& tag);

/// Line-delimited mask persistence; load validates record structure and
/// reports the offending line number on failure.
void save_masks(const std::vector<MaskSpec>& specs, const std::string& path);
std::vector<MaskSpec> load_masks(const std::string& path);

/// Corrupts every sample of a dataset at the given rates, returning the
/// masked samples (dataset order preserved) and their mask specs.
std::pair<std::vector<datasets::Sample>, std::vector<MaskSpec>> corrupt_dataset(
    const std::vector<datasets::Sample>& samples, MissingRates rates, std::uint64_t seed,
    int patch_size);

/// Applies pre-stored masks to a dataset; every sample must have exactly one
/// mask and vice versa.
std::vector<datasets::Sample> apply_masks(const std::vector<datasets::Sample>& samples,
                                          const std::vector<MaskSpec>& masks, int patch_size);

}  // namespace mmlnet::corruption
