#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmlnet/core/matrix.hpp"

namespace mmlnet::datasets {

/// One image-text-label triple. Images are grayscale pixel grids in [0,1],
/// quantized to the 8-bit grid k/255. Label 0 = real, 1 = fake.
struct Sample {
  std::string id;
  std::vector<std::string> tokens;
  Matrix image;
  int label = 0;
};

std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// 8-bit binary PGM (P5). Pixel byte k maps to k/255.
Matrix read_pgm(std::istream& in, const std::string& what);
Matrix read_pgm_file(const std::string& path);
void write_pgm(const Matrix& image, std::ostream& out);
void write_pgm_file(const Matrix& image, const std::string& path);

// Inline image form used in manifests: "base64:" + base64(PGM bytes).
std::string image_to_inline(const Matrix& image);
Matrix image_from_inline(const std::string& value, const std::string& what);

/// Bilinear resampling; identical size returns the input unchanged.
Matrix resize_bilinear(const Matrix& image, int out_rows, int out_cols);

/// Parses a line-delimited manifest of {id, text, image, label} records.
/// Image values are either paths relative to the manifest or inline
/// "base64:" strings; all images are resized to image_side x image_side.
std::vector<Sample> load_manifest(const std::string& path, int image_side);

/// Writes samples with images inlined, one record per line.
void write_manifest(const std::vector<Sample>& samples, const std::string& path);

struct DatasetSummary {
  int n_samples = 0;
  int n_label0 = 0;
  int n_label1 = 0;
  int min_tokens = 0;
  int max_tokens = 0;
  int image_side = 0;
};

DatasetSummary summarize(const std::vector<Sample>& samples);
std::string render_summary(const DatasetSummary& s);

/// Desk-scale balanced binary dataset where the label is recoverable from
/// either modality alone: class-conditional keyword vocabularies for text
/// and class-conditional patch intensities for images. `separation` sets the
/// intensity gap between classes, `noise` corrupts both modalities.
struct SyntheticSpec {
  int n = 0;
  std::uint64_t seed = 0;
  double separation = 0.5;
  double noise = 0.2;
  int image_side = 64;
  int patch_size = 16;
  int words_min = 8;
  int words_max = 20;
  double keyword_fraction = 0.6;
};

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);
std::vector<Sample> generate_synthetic(int n, std::uint64_t seed, double separation, double noise);

/// Fixed label rules used to probe how much signal survives masking;
/// independent of any trained model.
int text_rule_predict(const std::vector<std::string>& tokens);
int image_rule_predict(const Matrix& image);

}  // namespace mmlnet::datasets
