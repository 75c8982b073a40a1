// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"

using namespace pmidecode;

TEST_CASE("record then replay ten calls") {
  auto vlm = load_table_model(testing::fixture("golden/vlm_model.json"));
  const auto dir = testing::scratch_dir("trace-ten");
  std::vector<SourceQuery> calls;
  for (TokenId a = 0; a < 3; ++a) {
    for (const char* img : {"img1", "black", "white"}) calls.push_back({{a}, ImageContext::from_id(img), false});
  }
  calls.push_back({{}, ImageContext::from_id("img1"), false});
  REQUIRE(calls.size() == 10);

  CHECK(record_trace(vlm, calls, dir / "vlm.trace.jsonl") == 10);
  auto replay = TraceSource::load(dir / "vlm.trace.jsonl");
  CHECK(replay.size() == 10);
  CHECK(replay.vocabulary() == vlm.vocabulary());
  CHECK(replay.descriptor().supports_images);
  for (const auto& c : calls) CHECK(replay.next(c).distribution == vlm.next(c).distribution);

  SUBCASE("a context that was never recorded misses") {
    CHECK_THROWS_AS(next_distribution(replay, {0, 0}, ImageContext::from_id("img1")), TraceMissError);
    CHECK_THROWS_AS(next_distribution(replay, {0}, ImageContext::from_id("img2")), TraceMissError);
  }
}

TEST_CASE("record_trace collapses duplicate calls") {
  auto vlm = load_table_model(testing::fixture("golden/vlm_model.json"));
  const auto dir = testing::scratch_dir("trace-dup");
  const std::vector<SourceQuery> calls{{{0}, ImageContext::black(), false}, {{0}, ImageContext::black(), false}};
  CHECK(record_trace(vlm, calls, dir / "t.jsonl") == 1);
}

TEST_CASE("recording wrapper keeps embeddings and replays bit-exactly") {
  auto text = load_table_model(testing::fixture("repetition/text_model.json"));
  RecordingSource rec(text);
  rec.next(SourceQuery{{0}, std::nullopt, false});
  rec.next(SourceQuery{{0}, std::nullopt, true});
  rec.next(SourceQuery{{0, 1}, std::nullopt, false});
  const auto dir = testing::scratch_dir("trace-emb");
  CHECK(rec.save(dir / "t.jsonl") == 2);
  auto replay = TraceSource::load(dir / "t.jsonl");
  CHECK(replay.descriptor().supports_embeddings);
  const auto a = replay.next(SourceQuery{{0}, std::nullopt, true});
  const auto b = text.next(SourceQuery{{0}, std::nullopt, true});
  CHECK(a.distribution == b.distribution);
  CHECK(a.embedding == b.embedding);
  CHECK_THROWS_AS(replay.next(SourceQuery{{0, 1}, std::nullopt, true}), TraceMissError);
}

TEST_CASE("malformed trace files are rejected") {
  const auto dir = testing::scratch_dir("trace-bad");
  auto text = load_table_model(testing::fixture("golden/text_model.json"));
  std::vector<SourceQuery> calls{{{0}, std::nullopt, false}};
  record_trace(text, calls, dir / "good.jsonl");
  const std::string good = read_text_file(dir / "good.jsonl");
  const auto header = good.substr(0, good.find('\n') + 1);
  const auto record = good.substr(good.find('\n') + 1);

  SUBCASE("duplicate record") {
    write_text_file(dir / "dup.jsonl", header + record + record);
    CHECK_THROWS_AS(TraceSource::load(dir / "dup.jsonl"), ParseError);
  }
  SUBCASE("missing header") {
    write_text_file(dir / "nohead.jsonl", record);
    CHECK_THROWS_AS(TraceSource::load(dir / "nohead.jsonl"), ParseError);
  }
  SUBCASE("hash does not match vocabulary") {
    Json h = parse_json(header, "h");
    h["vocab_hash"] = std::string(64, '0');
    write_text_file(dir / "hash.jsonl", dump_compact(h) + "\n" + record);
    CHECK_THROWS_AS(TraceSource::load(dir / "hash.jsonl"), ParseError);
  }
  SUBCASE("invalid distribution") {
    Json r = parse_json(record, "r");
    r["distribution"] = {0.5, 0.5, 0.5};
    write_text_file(dir / "dist.jsonl", header + dump_compact(r) + "\n");
    CHECK_THROWS_AS(TraceSource::load(dir / "dist.jsonl"), ParseError);
  }
}
