// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Every check uses table and trace sources only.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "helpers.hpp"

using namespace pmidecode;

namespace {

struct Failure {
  std::string what;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Independent linear-space reference for one VLIS step.

struct ReferenceStep {
  std::vector<double> log_scores;
  std::vector<TokenId> candidates;
  bool fallback = false;
};

ReferenceStep reference_vlis(const std::vector<double>& p, const std::vector<double>& cond,
                             const std::vector<double>& marg, double tau, double alpha, double floor) {
  const std::size_t n = p.size();
  std::vector<double> q(n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) q[i] = std::pow(std::max(p[i], floor), 1.0 / tau);
    z += q[i];
  }
  ReferenceStep out;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0 && p[i] >= alpha) out.candidates.push_back(static_cast<TokenId>(i));
  }
  if (out.candidates.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (p[i] > p[best]) best = i;
    }
    out.candidates.push_back(static_cast<TokenId>(best));
    out.fallback = true;
  }
  out.log_scores.assign(n, -std::numeric_limits<double>::infinity());
  for (TokenId id : out.candidates) {
    const auto i = static_cast<std::size_t>(id);
    const double f = (q[i] / z) * (std::max(cond[i], floor) / std::max(marg[i], floor));
    out.log_scores[i] = std::log(f);
  }
  return out;
}

std::vector<double> mean_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> m(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
  }
  for (double& x : m) x /= static_cast<double>(rows.size());
  return m;
}

std::vector<double> probs_of(ModelSource& src, const ContextTokens& ctx, const std::optional<ImageContext>& img) {
  const auto d = next_distribution(src, ctx, img);
  return {d.probs().begin(), d.probs().end()};
}

// ---------------------------------------------------------------------------

std::string oracle_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> vocab_size(2, 64);
  std::uniform_real_distribution<double> log_tau(std::log(0.25), std::log(4.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  std::size_t fallbacks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = vocab_size(rng);
    const auto p = testing::random_probs(rng, n, 0.15);
    auto cond = testing::random_probs(rng, n, 0.15);
    const auto marg = trial % 10 == 0 ? cond : testing::random_probs(rng, n, 0.15);
    if (trial % 17 == 0) cond = marg;
    const double tau = trial % 7 == 0 ? 1.0 : std::exp(log_tau(rng));
    const double alpha = std::vector<double>{0.0, 0.001, 1.0 / static_cast<double>(n), 0.5 * unit(rng), 0.95}[trial % 5];

    DecodeConfig cfg;
    cfg.language_temperature = tau;
    cfg.fluency_threshold = alpha;
    const auto got = vlis_step_scores(TokenDistribution(p), TokenDistribution(cond), TokenDistribution(marg), cfg);
    const auto want = reference_vlis(p, cond, marg, tau, alpha, cfg.prob_floor);
    expect(got.candidates == want.candidates, fmt::format("tuple {}: candidate sets differ", trial));
    expect(got.fallback == want.fallback, fmt::format("tuple {}: fallback flag differs", trial));
    fallbacks += want.fallback;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = got.log_scores[i], b = want.log_scores[i];
      if (std::isinf(b)) {
        expect(a == b, fmt::format("tuple {}: token {} should be masked", trial, i));
        continue;
      }
      worst = std::max(worst, std::abs(a - b));
      expect(std::abs(a - b) <= 1e-9, fmt::format("tuple {}: token {} off by {:.3g}", trial, i, std::abs(a - b)));
    }
  }
  const double secs = seconds_since(start);
  expect(secs < 5.0, fmt::format("took {:.2f} s", secs));
  return fmt::format("1000 tuples, max |err| {:.2g}, {} fallbacks, {:.3f} s", worst, fallbacks, secs);
}

std::string reduction() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<std::size_t> vocab_size(3, 24);
  for (int trial = 0; trial < 100; ++trial) {
    auto vocab = testing::letters(vocab_size(rng));
    auto text = testing::random_table(rng, vocab, 2 + static_cast<std::size_t>(trial % 2));
    // No image-keyed rows, so the conditional equals every proxy's.
    auto vlm = testing::random_table(rng, vocab, 2, {}, 1.0, 0, true);
    DecodeConfig cfg;
    cfg.language_temperature = 1.0;
    cfg.fluency_threshold = std::vector<double>{0.0, 0.001, 0.05, 0.2}[trial % 4];
    cfg.max_tokens = 12;
    const ContextTokens prompt{static_cast<TokenId>(trial % static_cast<int>(vocab->size() - 1))};
    const auto vlis = greedy_decode({&text, &vlm}, Prompt{prompt, std::nullopt, ImageContext::from_id("q")}, cfg);
    cfg.scorer = ScorerKind::text_only;
    const auto plain = greedy_decode({&text, nullptr}, Prompt{prompt, std::nullopt, std::nullopt}, cfg);
    expect(vlis == plain, fmt::format("pair {}: outputs differ", trial));
    expect(dump_compact(to_json(vlis)) == dump_compact(to_json(plain)), fmt::format("pair {}: JSON differs", trial));
  }
  const double secs = seconds_since(start);
  expect(secs < 10.0, fmt::format("took {:.2f} s", secs));
  return fmt::format("100 pairs bit-identical, {:.3f} s", secs);
}

struct Sequence {
  ContextTokens tokens;
  double cum = 0.0;
};

/// All mask-admissible sequences, scored step by step with the reference.
void enumerate(ModelSource& text, ModelSource& vlm, const Prompt& prompt, const DecodeConfig& cfg,
               ContextTokens& prefix, double cum, std::vector<Sequence>& out) {
  const auto eos = text.vocabulary().eos_id();
  if (prefix.size() == cfg.max_tokens) {
    out.push_back({prefix, cum});
    return;
  }
  ContextTokens tctx = prompt.text, vctx = prompt.vlm_tokens();
  tctx.insert(tctx.end(), prefix.begin(), prefix.end());
  vctx.insert(vctx.end(), prefix.begin(), prefix.end());
  std::vector<std::vector<double>> proxies;
  for (const auto& img : cfg.marginal_images) proxies.push_back(probs_of(vlm, vctx, img));
  const auto step = reference_vlis(probs_of(text, tctx, std::nullopt), probs_of(vlm, vctx, prompt.image),
                                   mean_rows(proxies), cfg.language_temperature, cfg.fluency_threshold,
                                   cfg.prob_floor);
  for (TokenId id : step.candidates) {
    prefix.push_back(id);
    const double c = cum + step.log_scores[static_cast<std::size_t>(id)];
    if (id == eos) {
      out.push_back({prefix, c});
    } else {
      enumerate(text, vlm, prompt, cfg, prefix, c, out);
    }
    prefix.pop_back();
  }
}

double normalized(const Sequence& s, double lp) {
  return s.tokens.empty() ? s.cum : s.cum / std::pow(static_cast<double>(s.tokens.size()), lp);
}

std::string global_optimum() {
  std::mt19937_64 rng(1003);
  std::size_t fixtures = 0, largest = 0;
  const auto two_with_eos = std::make_shared<const Vocabulary>(std::vector<std::string>{"A", "</s>"}, 1);
  const auto two_live = testing::letters(3);
  for (int kind = 0; kind < 2; ++kind) {
    for (std::size_t steps = 1; steps <= 4; ++steps) {
      for (int trial = 0; trial < 60; ++trial) {
        auto vocab = kind == 0 ? two_with_eos : two_live;
        auto text = testing::random_table(rng, vocab, 3, {}, kind == 0 ? 1.0 : 0.0);
        auto vlm = testing::random_table(rng, vocab, 3, {"img", "black", "white"});
        DecodeConfig cfg;
        cfg.strategy = Strategy::beam;
        cfg.max_tokens = steps;
        cfg.beam_width = 16;
        cfg.fluency_threshold = trial % 3 == 0 ? 0.2 : 0.0;
        cfg.language_temperature = std::vector<double>{1.0, 0.5, 2.0}[trial % 3];
        cfg.length_penalty = std::vector<double>{1.0, -1.0, 0.0, 0.5, 2.0}[trial % 5];
        const Prompt prompt{{0}, std::nullopt, ImageContext::from_id("img")};

        std::vector<Sequence> all;
        ContextTokens prefix;
        enumerate(text, vlm, prompt, cfg, prefix, 0.0, all);
        expect(all.size() <= 16, fmt::format("fixture enumerates {} sequences", all.size()));
        largest = std::max(largest, all.size());
        const auto best = *std::max_element(all.begin(), all.end(), [&](const Sequence& a, const Sequence& b) {
          return normalized(a, cfg.length_penalty) < normalized(b, cfg.length_penalty);
        });
        const auto r = beam_decode({&text, &vlm}, prompt, cfg);
        const auto label = fmt::format("kind {} steps {} trial {}", kind, steps, trial);
        expect(r.tokens == best.tokens, label + ": beam missed the exhaustive optimum");
        expect(std::abs(r.final_score - normalized(best, cfg.length_penalty)) <= 1e-9, label + ": score differs");
        ++fixtures;
      }
    }
  }
  return fmt::format("{} fixtures, up to {} sequences each", fixtures, largest);
}

std::string cost_contract() {
  std::mt19937_64 rng(1004);
  auto vocab = testing::letters(8);
  std::size_t tokens = 0;
  for (int trial = 0; trial < 60; ++trial) {
    auto text = testing::random_table(rng, vocab, 2);
    auto vlm = testing::random_table(rng, vocab, 2, {"img", "black", "white", "p2", "p3"});
    DecodeConfig cfg;
    cfg.max_tokens = 10;
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 4);
    if (trial % 5 != 0) {  // otherwise keep the default black/white pair
      const std::vector<std::string> ids{"black", "white", "p2", "p3"};
      cfg.marginal_images.clear();
      for (std::size_t i = 0; i < k; ++i) cfg.marginal_images.push_back(ImageContext::from_id(ids[i]));
    }
    CountingSource t(text), v(vlm);
    const auto r = greedy_decode({&t, &v}, Prompt{{1}, std::nullopt, ImageContext::from_id("img")}, cfg);
    const auto n = r.tokens.size();
    expect(t.count() == n, fmt::format("trial {}: {} text queries for {} tokens", trial, t.count(), n));
    expect(v.count() == n * (cfg.marginal_images.size() + 1),
           fmt::format("trial {}: {} VLM queries for {} tokens with {} proxies", trial, v.count(), n,
                       cfg.marginal_images.size()));
    tokens += n;
  }
  return fmt::format("60 greedy runs, {} tokens", tokens);
}

std::string mask_soundness() {
  std::mt19937_64 rng(1005);
  std::size_t checked = 0, fallbacks = 0;
  for (int trial = 0; trial < 120; ++trial) {
    auto vocab = testing::letters(4 + static_cast<std::size_t>(trial % 12));
    auto text = testing::random_table(rng, vocab, 2, {}, 1.0, 4);
    auto vlm = testing::random_table(rng, vocab, 2, {"img", "black", "white"}, 1.0, 4);
    DecodeConfig cfg;
    cfg.max_tokens = 8;
    cfg.fluency_threshold = std::vector<double>{0.001, 0.05, 0.1, 0.3, 0.6}[trial % 5];
    cfg.strategy = std::vector<Strategy>{Strategy::greedy, Strategy::beam, Strategy::contrastive}[trial % 3];
    cfg.scorer = std::vector<ScorerKind>{ScorerKind::vlis, ScorerKind::naive_ensemble,
                                         ScorerKind::text_only}[(trial / 3) % 3];
    const Prompt prompt{{0}, std::nullopt, ImageContext::from_id("img")};
    const auto r = decode({&text, cfg.scorer == ScorerKind::text_only ? nullptr : &vlm},
                          cfg.scorer == ScorerKind::text_only ? Prompt{{0}, std::nullopt, std::nullopt} : prompt, cfg);
    ContextTokens ctx = prompt.text;
    for (TokenId tok : r.tokens) {
      const auto p = probs_of(text, ctx, std::nullopt);
      const double prob = p[static_cast<std::size_t>(tok)];
      if (prob < cfg.fluency_threshold || prob == 0.0) {
        const auto argmax_tok = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
        const bool none_pass = std::none_of(p.begin(), p.end(), [&](double x) { return x >= cfg.fluency_threshold; });
        expect(none_pass && tok == argmax_tok,
               fmt::format("trial {}: token {} with p {:.4g} < alpha {}", trial, tok, prob, cfg.fluency_threshold));
        ++fallbacks;
      }
      ctx.push_back(tok);
      ++checked;
    }
  }

  // Uniform text model over 4096 tokens: every p is 1/4096 < 0.001.
  std::vector<std::string> names;
  for (int i = 0; i < 4095; ++i) names.push_back("t" + std::to_string(i));
  names.push_back("</s>");
  auto big = std::make_shared<const Vocabulary>(names, 4095);
  auto uniform = testing::constant_model(big, std::vector<double>(4096, 1.0 / 4096.0));
  std::vector<double> c(4096, 0.1 / 4095.0);
  c[7] = 0.9;
  auto vlm = testing::constant_model(big, c, true);
  DecodeConfig cfg;
  cfg.fluency_threshold = 0.001;
  cfg.max_tokens = 3;
  const auto s = vlis_step_scores(TokenDistribution::uniform(4096), TokenDistribution(c), TokenDistribution(c), cfg);
  expect(s.fallback && s.candidates == std::vector<TokenId>{0}, "uniform-4096 step did not fall back to {0}");
  const auto r = greedy_decode({&uniform, &vlm}, Prompt{{1}, std::nullopt, ImageContext::from_id("img")}, cfg);
  expect(r.tokens == ContextTokens{0, 0, 0}, "uniform-4096 greedy decode did not pick token 0");
  expect(std::all_of(r.per_step.begin(), r.per_step.end(), [](const StepSummary& st) { return st.fallback; }),
         "uniform-4096 steps not flagged as fallback");
  return fmt::format("{} selected tokens, {} via fallback; uniform-4096 falls back to token 0", checked, fallbacks);
}

std::string marginal_estimator() {
  std::mt19937_64 rng(1006);
  std::uniform_int_distribution<std::size_t> vocab_size(2, 32), image_count(1, 8);
  for (int draw = 0; draw < 1000; ++draw) {
    auto vocab = testing::letters(vocab_size(rng));
    std::vector<TableModel::Entry> entries;
    std::vector<std::vector<double>> rows;
    std::vector<ImageContext> images;
    const std::size_t k = image_count(rng);
    for (std::size_t i = 0; i < k; ++i) {
      rows.push_back(testing::random_probs(rng, vocab->size(), 0.1));
      images.push_back(ImageContext::from_id("im" + std::to_string(i)));
      entries.push_back({{}, images.back().id, testing::dist(rows.back())});
    }
    TableModel vlm(vocab, 1, TokenDistribution::uniform(vocab->size()), entries, true);
    const auto base = estimate_marginal(vlm, {}, images);
    std::shuffle(images.begin(), images.end(), rng);
    const auto perm = estimate_marginal(vlm, {}, images);
    for (std::size_t t = 0; t < vocab->size(); ++t) {
      expect(std::abs(base[t] - perm[t]) <= 1e-9, fmt::format("draw {}: not permutation invariant", draw));
      double lo = 1.0, hi = 0.0;
      for (const auto& r : rows) {
        lo = std::min(lo, r[t]);
        hi = std::max(hi, r[t]);
      }
      expect(base[t] >= lo - 1e-9 && base[t] <= hi + 1e-9, fmt::format("draw {}: outside the convex hull", draw));
    }
  }
  auto vocab = std::make_shared<const Vocabulary>(std::vector<std::string>{"x", "</s>"}, 1);
  TableModel vlm(vocab, 1, TokenDistribution::uniform(2),
                 {{{}, std::string("black"), testing::dist({0.6, 0.4})}, {{}, std::string("white"), testing::dist({0.2, 0.8})}},
                 true);
  const auto m = estimate_marginal(vlm, {}, MarginalSpec{});
  // For two inputs, (a + b) / 2 is the correctly rounded mean: the sum rounds
  // once and halving is exact. The exact mean of the doubles 0.4 and 0.8 is a
  // rounding tie that resolves to the double just above 0.6.
  const double want[] = {(0.6 + 0.2) / 2.0, (0.4 + 0.8) / 2.0};
  expect(m[0] == want[0] && m[1] == want[1], fmt::format("fixture gave [{:.17g}, {:.17g}]", m[0], m[1]));
  expect(m[0] == 0.4, "fixture entry 0 is not 0.4");
  expect(m[1] == 0.6 || m[1] == std::nextafter(0.6, 1.0), "fixture entry 1 is more than 1 ulp from 0.6");
  return fmt::format("1000 draws; fixture gives the correctly rounded mean [{}, {}]", m[0], m[1]);
}

double reference_rep(const ContextTokens& s, std::size_t n) {
  if (s.size() < n) return 0.0;
  std::set<ContextTokens> unique;
  const std::size_t total = s.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) unique.insert(ContextTokens(s.begin() + i, s.begin() + i + n));
  return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::string metrics() {
  expect(rep_n(ContextTokens{0, 1, 0, 1, 0}, 2) == 0.5, "rep-2 of A B A B A is not 0.5");
  std::mt19937_64 rng(1007);
  std::uniform_int_distribution<std::size_t> len(0, 60);
  std::uniform_int_distribution<TokenId> tok(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    ContextTokens s(len(rng));
    for (auto& t : s) t = tok(rng);
    double product = 1.0;
    for (std::size_t n = 2; n <= 4; ++n) {
      const double r = rep_n(s, n);
      expect(std::abs(r - reference_rep(s, n)) <= 1e-12, fmt::format("sequence {}: rep-{} differs", trial, n));
      product *= 1.0 - r;
    }
    expect(std::abs(diversity(s) - product) <= 1e-9, fmt::format("sequence {}: diversity identity fails", trial));
  }
  return "rep-2(A B A B A) = 0.5; 1000 sequences";
}

struct Captured {
  int rc;
  std::string out;
};

template <class F>
Captured capture(F&& f) {
  std::ostringstream out, err;
  const int rc = f(out, err);
  return {rc, out.str()};
}

std::string determinism() {
  using namespace pmidecode::cli;
  const auto golden_cfg = testing::fixture("golden/config.json");
  CliOptions opts;
  opts.config = golden_cfg;

  // Golden CLI byte stability.
  const auto d1 = capture([&](auto& o, auto& e) { return cmd_decode(opts, o, e); });
  const auto d2 = capture([&](auto& o, auto& e) { return cmd_decode(opts, o, e); });
  expect(d1.rc == 0 && d1.out == d2.out, "golden decode differs between runs");
  expect(d1.out == read_text_file(testing::fixture("golden/expected_decode.jsonl")), "golden decode differs from frozen output");
  const std::vector<std::string> scorers{"vlis", "naive_ensemble", "vlm_only", "text_only"};
  const auto c1 = capture([&](auto& o, auto& e) { return cmd_compare(opts, scorers, o, e); });
  const auto c2 = capture([&](auto& o, auto& e) { return cmd_compare(opts, scorers, o, e); });
  expect(c1.rc == 0 && c1.out == c2.out, "golden compare differs between runs");
  expect(c1.out == read_text_file(testing::fixture("golden/expected_compare.jsonl")), "golden compare differs from frozen output");

  // CLI trace record and replay.
  const auto dir = testing::scratch_dir("acceptance-trace");
  CliOptions trace_opts = opts;
  trace_opts.output = dir / "golden";
  expect(capture([&](auto& o, auto& e) { return cmd_trace(trace_opts, o, e); }).rc == 0, "trace command failed");
  CliOptions replay_opts;
  replay_opts.config = dir / "golden" / "replay.json";
  const auto replay = capture([&](auto& o, auto& e) { return cmd_decode(replay_opts, o, e); });
  expect(replay.rc == 0 && replay.out == d1.out, "CLI trace replay differs from the live decode");

  // Library-level record and replay for every strategy.
  std::mt19937_64 rng(1008);
  auto vocab = testing::letters(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto text = testing::random_table(rng, vocab, 3, {}, 1.0, 4);
    auto vlm = testing::random_table(rng, vocab, 2, {"img", "black", "white"}, 1.0, 4);
    DecodeConfig cfg;
    cfg.max_tokens = 8;
    cfg.strategy = std::vector<Strategy>{Strategy::greedy, Strategy::beam, Strategy::contrastive}[trial % 3];
    const Prompt prompt{{0, 1}, std::nullopt, ImageContext::from_id("img")};
    RecordingSource rt(text), rv(vlm);
    const auto live = decode({&rt, &rv}, prompt, cfg);
    rt.save(dir / "t.jsonl");
    rv.save(dir / "v.jsonl");
    auto tt = TraceSource::load(dir / "t.jsonl");
    auto tv = TraceSource::load(dir / "v.jsonl");
    const auto replayed = decode({&tt, &tv}, prompt, cfg);
    expect(dump_compact(to_json(live)) == dump_compact(to_json(replayed)),
           fmt::format("trial {}: trace replay differs", trial));
  }

  // Config round trips.
  for (const auto& path : {golden_cfg, testing::fixture("alpha_sweep/config.json"), dir / "golden" / "replay.json"}) {
    const auto cfg = load_run_config(path);
    const Json doc = to_json(cfg);
    const auto back = run_config_from_json(doc, path.string(), cfg.base_dir);
    expect(back == cfg, path.string() + ": config does not round-trip");
    expect(dump_compact(to_json(back)) == dump_compact(doc), path.string() + ": config JSON not stable");
    expect(config_hash(back) == config_hash(cfg), path.string() + ": config hash changed");
  }
  return "golden CLI stable, trace replay byte-identical, configs round-trip";
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<std::string()>>> criteria{
      {"oracle_equivalence", oracle_equivalence}, {"reduction", reduction},
      {"global_optimum", global_optimum},         {"cost_contract", cost_contract},
      {"mask_soundness", mask_soundness},         {"marginal_estimator", marginal_estimator},
      {"metrics", metrics},                       {"determinism_roundtrip", determinism},
  };
  spdlog::set_level(spdlog::level::off);
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    try {
      const auto detail = check();
      std::cout << "PASS " << name << ": " << detail << '\n';
    } catch (const Failure& f) {
      std::cout << "FAIL " << name << ": " << f.what << '\n';
      ++failed;
    } catch (const std::exception& e) {
      std::cout << "FAIL " << name << ": exception: " << e.what() << '\n';
      ++failed;
    }
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
