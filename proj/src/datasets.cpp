#include "mmlnet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "mmlnet/core/rng.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::datasets {
namespace {

using nlohmann::json;

constexpr char kInlinePrefix[] = "base64:";
constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

int b64_value(char c, const std::string& what) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  throw DataError(what + ": invalid base64 character");
}

std::string base64_decode(const std::string& text, const std::string& what) {
  if (text.size() % 4 != 0) throw DataError(what + ": base64 length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const int pad = (text[i + 3] == '=') ? (text[i + 2] == '=' ? 2 : 1) : 0;
    unsigned v = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      v = (v << 6) | ((j >= 4 - pad && c == '=') ? 0u : static_cast<unsigned>(b64_value(c, what)));
    }
    out += static_cast<char>((v >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(v & 0xff);
  }
  return out;
}

double quantize8(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return std::round(clamped * 255.0) / 255.0;
}

// Skips PGM whitespace and '#' comments, then reads one unsigned integer.
int read_pgm_int(std::istream& in, const std::string& what) {
  int c = in.peek();
  while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw DataError(what + ": truncated PGM header");
  return value;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string word;
  while (in >> word) tokens.push_back(word);
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

Matrix read_pgm(std::istream& in, const std::string& what) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') {
    throw DataError(what + ": not a binary PGM (P5) image");
  }
  const int width = read_pgm_int(in, what);
  const int height = read_pgm_int(in, what);
  const int maxval = read_pgm_int(in, what);
  if (width <= 0 || height <= 0) throw DataError(what + ": bad PGM dimensions");
  if (maxval != 255) throw DataError(what + ": only 8-bit PGM supported");
  in.get();  // single whitespace after maxval
  std::string bytes(static_cast<std::size_t>(width) * height, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError(what + ": truncated PGM pixel data");
  Matrix img(height, width);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.data[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / 255.0;
  }
  return img;
}

Matrix read_pgm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  return read_pgm(in, path);
}

void write_pgm(const Matrix& image, std::ostream& out) {
  out << "P5\n" << image.cols << ' ' << image.rows << "\n255\n";
  std::string bytes(image.data.size(), '\0');
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const double v = std::clamp(image.data[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm_file(const Matrix& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open image for writing: " + path);
  write_pgm(image, out);
  if (!out) throw DataError("failed writing image: " + path);
}

std::string image_to_inline(const Matrix& image) {
  std::ostringstream out;
  write_pgm(image, out);
  return kInlinePrefix + base64_encode(out.str());
}

Matrix image_from_inline(const std::string& value, const std::string& what) {
  const std::string bytes = base64_decode(value.substr(sizeof(kInlinePrefix) - 1), what);
  std::istringstream in(bytes);
  return read_pgm(in, what);
}

Matrix resize_bilinear(const Matrix& image, int out_rows, int out_cols) {
  if (image.rows == out_rows && image.cols == out_cols) return image;
  if (out_rows <= 0 || out_cols <= 0) throw DataError("resize: non-positive target size");
  Matrix out(out_rows, out_cols);
  const double sy = static_cast<double>(image.rows) / out_rows;
  const double sx = static_cast<double>(image.cols) / out_cols;
  for (int r = 0; r < out_rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.rows - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.rows - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_cols; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.cols - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.cols - 1);
      const double wx = fx - x0;
      out(r, c) = (1 - wy) * ((1 - wx) * image(y0, x0) + wx * image(y0, x1)) +
                  wy * ((1 - wx) * image(y1, x0) + wx * image(y1, x1));
    }
  }
  return out;
}

std::vector<Sample> load_manifest(const std::string& path, int image_side) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path);
  const std::string base_dir = std::filesystem::path(path).parent_path().string();
  std::vector<Sample> samples;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw DataError(where + ": malformed record");
    for (const char* field : {"id", "text", "image", "label"}) {
      if (!rec.contains(field)) throw DataError(where + ": missing field " + field);
    }
    if (!rec["id"].is_string() || !rec["text"].is_string() || !rec["image"].is_string() ||
        !rec["label"].is_number_integer()) {
      throw DataError(where + ": field with wrong type");
    }
    Sample s;
    s.id = rec["id"].get<std::string>();
    if (!seen_ids.insert(s.id).second) throw DataError(where + ": duplicate id " + s.id);
    const int label = rec["label"].get<int>();
    if (label != 0 && label != 1) {
      throw DataError(where + ": label " + std::to_string(label) + " outside {0,1} (id " + s.id +
                      ")");
    }
    s.label = label;
    s.tokens = tokenize(rec["text"].get<std::string>());
    if (s.tokens.empty()) throw DataError(where + ": empty text (id " + s.id + ")");
    const std::string image_ref = rec["image"].get<std::string>();
    Matrix img;
    if (image_ref.rfind(kInlinePrefix, 0) == 0) {
      img = image_from_inline(image_ref, where + " (id " + s.id + ")");
    } else {
      const auto img_path = std::filesystem::path(base_dir) / image_ref;
      img = read_pgm_file(img_path.string());
    }
    s.image = resize_bilinear(img, image_side, image_side);
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_manifest(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open manifest for writing: " + path);
  for (const Sample& s : samples) {
    json rec{{"id", s.id},
             {"text", join_tokens(s.tokens)},
             {"image", image_to_inline(s.image)},
             {"label", s.label}};
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("failed writing manifest: " + path);
}

DatasetSummary summarize(const std::vector<Sample>& samples) {
  DatasetSummary s;
  s.n_samples = static_cast<int>(samples.size());
  for (const Sample& x : samples) {
    (x.label == 0 ? s.n_label0 : s.n_label1) += 1;
    const int t = static_cast<int>(x.tokens.size());
    if (s.min_tokens == 0 || t < s.min_tokens) s.min_tokens = t;
    s.max_tokens = std::max(s.max_tokens, t);
    s.image_side = x.image.rows;
  }
  return s;
}

std::string render_summary(const DatasetSummary& s) {
  std::ostringstream out;
  out << "samples: " << s.n_samples << " (label 0: " << s.n_label0 << ", label 1: " << s.n_label1
      << ")\n"
      << "tokens per sample: " << s.min_tokens << ".." << s.max_tokens << "\n"
      << "image side: " << s.image_side << "\n";
  return out.str();
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 4 || spec.n % 2 != 0) {
    throw DataError("synthetic dataset size must be even and at least 4, got " +
                    std::to_string(spec.n));
  }
  if (spec.image_side % spec.patch_size != 0) {
    throw DataError("synthetic image side must be divisible by the patch size");
  }
  constexpr int kKeywordsPerClass = 16;
  constexpr int kFillerCount = 24;
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    Sample s;
    s.id = "syn" + std::to_string(i);
    s.label = i % 2;
    Rng rng = Rng::stream(spec.seed, "synth/" + s.id);

    const int len = spec.words_min + rng.below_int(spec.words_max - spec.words_min + 1);
    for (int w = 0; w < len; ++w) {
      // Position 0 is always a keyword so a majority rule is exact at noise 0.
      const bool keyword = (w == 0) || rng.uniform() < spec.keyword_fraction;
      if (keyword) {
        const bool flipped = rng.uniform() < spec.noise;
        const int cls = flipped ? 1 - s.label : s.label;
        s.tokens.push_back("k" + std::to_string(cls) + "_" +
                           std::to_string(rng.below_int(kKeywordsPerClass)));
      } else {
        s.tokens.push_back("f" + std::to_string(rng.below_int(kFillerCount)));
      }
    }

    // Two image cues. Color: per-patch mean shifted by class, so a global
    // mean-intensity rule stays informative (and exact at noise 0). Texture:
    // class 1 patches are rough (wide per-pixel spread), class 0 smooth; the
    // patch mean is unchanged, so the cue only shows up in second-order
    // statistics. Pixels stay >= 1/255 so a masked (zeroed) patch is always
    // distinguishable from real content.
    const double base = 0.5 + (s.label == 1 ? 0.25 : -0.25) * spec.separation;
    const double roughness = s.label == 1 ? 0.05 + 0.45 * spec.separation : 0.05;
    const int per_row = spec.image_side / spec.patch_size;
    s.image = Matrix(spec.image_side, spec.image_side);
    for (int p = 0; p < per_row * per_row; ++p) {
      const double v = base + spec.noise * 0.6 * rng.normal();
      const double sigma = std::max(0.0, roughness * (1.0 + spec.noise * 0.8 * rng.normal()));
      const int r0 = (p / per_row) * spec.patch_size;
      const int c0 = (p % per_row) * spec.patch_size;
      for (int r = r0; r < r0 + spec.patch_size; ++r) {
        double* row = s.image.row(r);
        for (int c = c0; c < c0 + spec.patch_size; ++c) {
          row[c] = std::max(1.0 / 255.0, quantize8(v + sigma * rng.normal()));
        }
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Sample> generate_synthetic(int n, std::uint64_t seed, double separation,
                                       double noise) {
  SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  spec.separation = separation;
  spec.noise = noise;
  return generate_synthetic(spec);
}

int text_rule_predict(const std::vector<std::string>& tokens) {
  int votes[2] = {0, 0};
  for (const std::string& t : tokens) {
    if (t.rfind("k0_", 0) == 0) ++votes[0];
    if (t.rfind("k1_", 0) == 0) ++votes[1];
  }
  return votes[1] > votes[0] ? 1 : 0;
}

int image_rule_predict(const Matrix& image) {
  double sum = 0.0;
  int count = 0;
  for (double v : image.data) {
    if (v > 0.0) {
      sum += v;
      ++count;
    }
  }
  if (count == 0) return 0;
  return sum / count > 0.5 ? 1 : 0;
}

}  // namespace mmlnet::datasets
