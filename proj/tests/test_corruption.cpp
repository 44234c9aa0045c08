#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "mmlnet/core/rng.hpp"
#include "mmlnet/corruption.hpp"
#include "mmlnet/errors.hpp"

using namespace mmlnet;
using namespace mmlnet::corruption;

namespace {

// Independent oracle: the largest k with k/count <= 1 - rate/100, found by
// exact rational search instead of the production integer division.
int survivor_oracle(int count, int rate) {
  int k = 0;
  while (k + 1 <= count && (k + 1) * 100 <= count * (100 - rate)) ++k;
  return k;
}

std::vector<std::string> make_tokens(int m) {
  std::vector<std::string> t;
  for (int i = 0; i < m; ++i) t.push_back("w" + std::to_string(i));
  return t;
}

Matrix make_image(int side) {
  Matrix img(side, side);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = 0.1 + 0.8 * static_cast<double>(i % 97) / 97.0;
  return img;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/mmlnet_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("survivor_count matches the rational-search oracle") {
  CHECK(survivor_count(10, 25) == 7);   // non-integral 10*0.75 floors down
  CHECK(survivor_count(49, 50) == 24);
  CHECK(survivor_count(4, 50) == 2);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const int m = 1 + rng.below_int(500);
    const int rate = rng.below_int(101);
    CHECK(survivor_count(m, rate) == survivor_oracle(m, rate));
  }
}

TEST_CASE("survivor_count never grows with rate") {
  for (int m : {1, 7, 49, 100}) {
    for (int rate = 1; rate <= 100; ++rate) {
      CHECK(survivor_count(m, rate) <= survivor_count(m, rate - 1));
    }
  }
}

TEST_CASE("mask_text keeps order, counts, and determinism") {
  const auto tokens = make_tokens(10);
  auto [kept, removed] = mask_text(tokens, 25, 42, "s1");
  CHECK(kept.size() == 7);
  CHECK(removed.size() == 3);
  // Survivors keep original relative order.
  std::size_t pos = 0;
  for (const auto& t : tokens) {
    if (pos < kept.size() && kept[pos] == t) ++pos;
  }
  CHECK(pos == kept.size());
  for (std::size_t i = 0; i < removed.size(); ++i) {
    CHECK(removed[i] >= 0);
    CHECK(removed[i] < 10);
    if (i > 0) CHECK(removed[i] > removed[i - 1]);
  }
  auto second = mask_text(tokens, 25, 42, "s1");
  CHECK(second.first == kept);
  CHECK(second.second == removed);
  // Different sample or seed changes the draw (overwhelmingly likely).
  CHECK(mask_text(tokens, 25, 42, "s2").second != removed);
}

TEST_CASE("mask_text edge rates") {
  const auto tokens = make_tokens(6);
  auto [same, none] = mask_text(tokens, 0, 7, "s");
  CHECK(same == tokens);
  CHECK(none.empty());
  auto [gone, all] = mask_text(tokens, 100, 7, "s");
  CHECK(gone.empty());
  CHECK(all.size() == 6);
}

TEST_CASE("mask_text rejects empty input and bad rates") {
  CHECK_THROWS_AS(mask_text({}, 50, 7, "s"), DataError);
  CHECK_THROWS_AS(mask_text(make_tokens(3), -1, 7, "s"), DataError);
  CHECK_THROWS_AS(mask_text(make_tokens(3), 101, 7, "s"), DataError);
}

TEST_CASE("mask_image_patches zero-fills exactly the chosen patches") {
  const Matrix img = make_image(224);
  auto [masked, indices] = mask_image_patches(img, 32, 50, 42, "img1");
  CHECK(indices.size() == 25);  // 49 patches, 24 survive
  std::vector<bool> is_masked(49, false);
  for (int p : indices) is_masked[static_cast<std::size_t>(p)] = true;
  for (int r = 0; r < 224; ++r) {
    for (int c = 0; c < 224; ++c) {
      const int p = (r / 32) * 7 + (c / 32);
      if (is_masked[static_cast<std::size_t>(p)]) {
        CHECK(masked(r, c) == 0.0);
      } else {
        CHECK(masked(r, c) == img(r, c));  // bit-identical survivors
      }
    }
  }
  auto again = mask_image_patches(img, 32, 50, 42, "img1");
  CHECK(again.first == masked);
}

TEST_CASE("mask_image_patches edge rates and bad shapes") {
  const Matrix img = make_image(64);
  auto [same, none] = mask_image_patches(img, 16, 0, 1, "s");
  CHECK(same == img);
  CHECK(none.empty());
  auto [zero, all] = mask_image_patches(img, 16, 100, 1, "s");
  CHECK(all.size() == 16);
  for (double v : zero.data) CHECK(v == 0.0);
  CHECK_THROWS_AS(mask_image_patches(make_image(65), 16, 50, 1, "s"), DataError);
}

TEST_CASE("masking is independent of sample iteration order") {
  const auto tokens = make_tokens(12);
  auto a_first = mask_text(tokens, 50, 9, "a").second;
  mask_text(tokens, 50, 9, "zzz");
  auto a_second = mask_text(tokens, 50, 9, "a").second;
  CHECK(a_first == a_second);
}

TEST_CASE("scenario grid layout") {
  const auto grid = scenario_grid();
  REQUIRE(grid.size() == 15);
  int incomplete = 0, total100 = 0;
  for (const auto& s : grid) {
    const int total = s.text_rate + s.image_rate;
    CHECK((total == 0 || total == 25 || total == 50 || total == 75 || total == 100));
    if (total > 0) ++incomplete;
    if (total == 100) ++total100;
  }
  CHECK(incomplete == 14);
  CHECK(total100 == 5);
  CHECK(grid.front() == MissingRates{0, 100});
  CHECK(grid[2] == MissingRates{50, 50});
  CHECK(grid.back() == MissingRates{0, 0});
  // Descending total, then ascending text rate.
  for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
    const int t0 = grid[i - 1].text_rate + grid[i - 1].image_rate;
    const int t1 = grid[i].text_rate + grid[i].image_rate;
    CHECK(t0 >= t1);
    if (t0 == t1) CHECK(grid[i - 1].text_rate < grid[i].text_rate);
  }
  // Both asymmetric pairs present.
  CHECK(std::count(grid.begin(), grid.end(), MissingRates{25, 75}) == 1);
  CHECK(std::count(grid.begin(), grid.end(), MissingRates{75, 25}) == 1);
}

TEST_CASE("scenario tags") {
  CHECK(scenario_tag({25, 75}) == "t25_i75");
  CHECK(scenario_tag({0, 0}) == "t0_i0");
}

TEST_CASE("mask files round-trip") {
  TempFile f("masks.jsonl");
  std::vector<MaskSpec> specs;
  specs.push_back({"a", {25, 75}, 42, {0, 3, 5}, {1, 2}});
  specs.push_back({"b", {0, 0}, 42, {}, {}});
  save_masks(specs, f.path);
  CHECK(load_masks(f.path) == specs);

  save_masks({}, f.path);
  CHECK(load_masks(f.path).empty());
}

TEST_CASE("mask file rerun is byte-identical") {
  std::vector<MaskSpec> specs{{"a", {50, 25}, 7, {1, 4}, {0}}};
  TempFile f1("masks1.jsonl"), f2("masks2.jsonl");
  save_masks(specs, f1.path);
  save_masks(specs, f2.path);
  std::ifstream i1(f1.path), i2(f2.path);
  std::string s1((std::istreambuf_iterator<char>(i1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(i2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());
}

TEST_CASE("mask file parse errors name the line") {
  TempFile f("masks_bad.jsonl");
  SUBCASE("duplicate index") {
    std::ofstream(f.path) << R"({"sample_id":"a","text_rate":25,"image_rate":0,"seed":1,)"
                          << R"("removed_word_indices":[2,2],"masked_patch_indices":[]})" << "\n";
    CHECK_THROWS_WITH_AS(load_masks(f.path),
                         doctest::Contains("line 1"), DataError);
  }
  SUBCASE("malformed json on a later line") {
    std::ofstream(f.path) << R"({"sample_id":"a","text_rate":0,"image_rate":0,"seed":1,)"
                          << R"("removed_word_indices":[],"masked_patch_indices":[]})" << "\n"
                          << "not json\n";
    CHECK_THROWS_WITH_AS(load_masks(f.path), doctest::Contains("line 2"), DataError);
  }
  SUBCASE("missing field") {
    std::ofstream(f.path) << R"({"sample_id":"a"})" << "\n";
    CHECK_THROWS_AS(load_masks(f.path), DataError);
  }
  SUBCASE("unsorted indices") {
    std::ofstream(f.path) << R"({"sample_id":"a","text_rate":25,"image_rate":0,"seed":1,)"
                          << R"("removed_word_indices":[5,2],"masked_patch_indices":[]})" << "\n";
    CHECK_THROWS_AS(load_masks(f.path), DataError);
  }
}
