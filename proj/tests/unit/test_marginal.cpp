// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include <doctest.h>

#include "helpers.hpp"

using namespace pmidecode;
using testing::dist;

namespace {

/// VLM answering every context with a per-image row.
TableModel per_image_vlm(std::shared_ptr<const Vocabulary> vocab, const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::vector<TableModel::Entry> entries;
  for (const auto& [id, p] : rows) entries.push_back({{}, id, dist(p)});
  return TableModel(vocab, 1, TokenDistribution::uniform(vocab->size()), entries, true);
}

}  // namespace

TEST_CASE("marginal is the probability-space mean") {
  auto vocab = std::make_shared<const Vocabulary>(std::vector<std::string>{"x", "</s>"}, 1);
  auto vlm = per_image_vlm(vocab, {{"black", {0.6, 0.4}}, {"white", {0.2, 0.8}}});
  const auto m = estimate_marginal(vlm, {}, MarginalSpec{});
  CHECK(m[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx(0.6).epsilon(1e-15));

  SUBCASE("single image returns that conditional unchanged") {
    const auto one = estimate_marginal(vlm, {}, MarginalSpec::predefined({ImageContext::white()}));
    CHECK(one == dist({0.2, 0.8}));
  }
}

TEST_CASE("identical conditionals collapse to the same distribution") {
  auto vocab = testing::letters(4);
  const std::vector<double> row{0.1, 0.2, 0.3, 0.4};
  auto vlm = per_image_vlm(vocab, {{"black", row}, {"white", row}, {"gray", row}});
  const auto m = estimate_marginal(
      vlm, {}, MarginalSpec::predefined({ImageContext::black(), ImageContext::white(), ImageContext::from_id("gray")}));
  for (std::size_t i = 0; i < row.size(); ++i) CHECK(m[i] == doctest::Approx(row[i]).epsilon(1e-15));
}

TEST_CASE("marginal is permutation invariant and convex") {
  std::mt19937_64 rng(5);
  auto vocab = testing::letters(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::vector<ImageContext> images;
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 5);
    for (std::size_t i = 0; i < k; ++i) {
      rows.emplace_back("im" + std::to_string(i), testing::random_probs(rng, vocab->size(), 0.2));
      images.push_back(ImageContext::from_id(rows.back().first));
    }
    auto vlm = per_image_vlm(vocab, rows);
    const auto base = estimate_marginal(vlm, {}, images);
    std::shuffle(images.begin(), images.end(), rng);
    const auto perm = estimate_marginal(vlm, {}, images);
    for (std::size_t t = 0; t < vocab->size(); ++t) {
      CHECK(std::abs(base[t] - perm[t]) < 1e-12);
      double lo = 1.0, hi = 0.0;
      for (const auto& [id, p] : rows) {
        lo = std::min(lo, p[t]);
        hi = std::max(hi, p[t]);
      }
      CHECK(base[t] >= lo - 1e-12);
      CHECK(base[t] <= hi + 1e-12);
    }
  }
}

TEST_CASE("marginal estimation errors") {
  auto text = testing::constant_model(testing::letters(3), {0.2, 0.3, 0.5});
  CHECK_THROWS_AS(estimate_marginal(text, {}, MarginalSpec{}), UsageError);
  std::vector<ImageContext> none;
  auto vlm = per_image_vlm(testing::letters(3), {});
  CHECK_THROWS_AS(estimate_marginal(vlm, {}, none), ConfigError);
}

TEST_CASE("errors name the failing proxy image") {
  auto vocab = testing::letters(3);
  auto vlm = per_image_vlm(vocab, {{"black", {0.2, 0.3, 0.5}}});
  const auto dir = testing::scratch_dir("marginal-miss");
  const std::vector<SourceQuery> calls{{{}, ImageContext::black(), false}};
  record_trace(vlm, calls, dir / "t.jsonl");
  auto trace = TraceSource::load(dir / "t.jsonl");
  try {
    estimate_marginal(trace, {}, MarginalSpec{});
    FAIL("expected TraceMissError");
  } catch (const TraceMissError& e) {
    CHECK(e.message().find("white") != std::string::npos);
  }
}

TEST_CASE("random image sample is seeded and sorted-pool based") {
  const auto dir = testing::scratch_dir("pool");
  for (const char* name : {"d.png", "a.png", "c.png", "b.png", "e.png"}) write_text_file(dir / name, "x");

  const auto a = MarginalSpec::random_sample(dir, 3, 42);
  const auto b = MarginalSpec::random_sample(dir, 3, 42);
  CHECK(a.images == b.images);
  CHECK(a.images.size() == 3);
  for (const auto& img : a.images) {
    CHECK(img.kind == ImageKind::file);
    CHECK(img.id.rfind("pool:", 0) == 0);
  }
  const auto all = MarginalSpec::random_sample(dir, 5, 1);
  std::set<std::string> ids;
  for (const auto& img : all.images) ids.insert(img.id);
  CHECK(ids.size() == 5);
  CHECK_THROWS_AS(MarginalSpec::random_sample(dir, 6, 1), ConfigError);
  CHECK_THROWS_AS(MarginalSpec::random_sample(dir / "missing", 1, 1), ConfigError);

  bool differs = false;
  for (std::uint64_t seed = 0; seed < 10 && !differs; ++seed) {
    differs = MarginalSpec::random_sample(dir, 3, seed).images != a.images;
  }
  CHECK(differs);
}

TEST_CASE("MarginalSpec JSON") {
  const auto dir = testing::scratch_dir("pool-json");
  for (const char* name : {"a.png", "b.png", "c.png"}) write_text_file(dir / name, "x");
  const Json doc = parse_json(R"({"scheme": "random_sample", "pool_dir": "pmidecode-test-pool-json", "count": 2})", "m");
  const auto spec = marginal_spec_from_json(JsonReader(doc, "m"), dir.parent_path(), 9);
  CHECK(spec.seed == 9u);
  CHECK(spec.pool_dir == "pmidecode-test-pool-json");
  const auto again = marginal_spec_from_json(JsonReader(to_json(spec), "m"), dir.parent_path(), 0);
  CHECK(again == spec);

  const Json empty = parse_json(R"({"scheme": "predefined", "images": []})", "m");
  CHECK_THROWS_AS(marginal_spec_from_json(JsonReader(empty, "m"), ".", 0), ParseError);
  const Json bad = parse_json(R"({"scheme": "sometimes"})", "m");
  CHECK_THROWS_AS(marginal_spec_from_json(JsonReader(bad, "m"), ".", 0), ParseError);
}
