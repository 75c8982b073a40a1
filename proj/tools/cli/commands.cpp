// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pmidecode::cli {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::config:
    case ErrorCode::usage:
    case ErrorCode::parse:
    case ErrorCode::io:
      return kExitConfig;
    case ErrorCode::transport:
    case ErrorCode::protocol:
    case ErrorCode::session:
    case ErrorCode::trace_miss:
    case ErrorCode::capability:
      return kExitSource;
    case ErrorCode::dimension:
    case ErrorCode::value:
    case ErrorCode::invariant:
      return kExitInternal;
  }
  return kExitInternal;
}

Json error_record(const Error& e, std::optional<std::size_t> index) {
  Json err{{"code", std::string(to_string(e.code()))}, {"message", e.message()}, {"exit_code", exit_code_for(e)}};
  if (const auto* t = dynamic_cast<const TransportError*>(&e)) {
    err["uri"] = t->uri();
    err["attempts"] = t->attempts();
    err["retryable"] = t->retryable();
  } else if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
    err["source"] = p->source();
    if (p->line() > 0) err["line"] = p->line();
    if (!p->field().empty()) err["field"] = p->field();
  }
  Json doc{{"error", err}};
  if (index) doc["index"] = *index;
  return doc;
}

namespace {

class Sink {
 public:
  Sink(const std::optional<std::filesystem::path>& path, std::ostream& fallback) : fallback_(fallback) {
    if (!path) return;
    if (path->has_parent_path()) std::filesystem::create_directories(path->parent_path());
    file_.open(*path, std::ios::binary | std::ios::trunc);
    if (!file_) throw IoError(fmt::format("cannot open output '{}'", path->string()));
  }

  void write(const Json& doc) {
    std::ostream& os = file_.is_open() ? static_cast<std::ostream&>(file_) : fallback_;
    os << dump_compact(doc) << '\n';
    os.flush();
  }

 private:
  std::ostream& fallback_;
  std::ofstream file_;
};

std::optional<std::filesystem::path> output_path(const CliOptions& opts, const RunConfig& cfg) {
  if (opts.output) return *opts.output;
  if (!cfg.output.empty()) return cfg.resolve(cfg.output);
  return std::nullopt;
}

std::vector<Json> load_inputs(const RunConfig& cfg) {
  if (cfg.inputs.empty()) throw ConfigError("config has no \"inputs\" file");
  return read_jsonl(cfg.resolve(cfg.inputs));
}

template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << dump_compact(error_record(e)) << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    const Json doc{{"error", {{"code", "internal"}, {"message", e.what()}, {"exit_code", kExitInternal}}}};
    err << dump_compact(doc) << '\n';
    return kExitInternal;
  }
}

struct Outcome {
  std::size_t index = 0;
  std::optional<InputRecord> input;
  std::optional<DecodeResult> result;
  std::optional<Json> error;
};

Outcome run_one(const RunConfig& cfg, const DecodeConfig& dc, const ModelPair& pair, const Vocabulary& vocab,
                const Json& row, std::size_t index, const CliOptions& opts) {
  Outcome o;
  o.index = index;
  try {
    o.input = make_input(cfg, vocab, row, index);
    o.result = decode(pair, o.input->prompt, dc, DecodeOptions{opts.explain, 1});
  } catch (const InvariantError&) {
    throw;
  } catch (Error& e) {
    if (!opts.keep_going) {
      e.add_context(fmt::format("input {}", index));
      throw;
    }
    spdlog::warn("input {}: {}", index, e.message());
    o.error = error_record(e, index);
  }
  return o;
}

bool pair_concurrent(const ModelPair& pair) {
  return (!pair.text || pair.text->concurrent_safe()) && (!pair.vlm || pair.vlm->concurrent_safe());
}

/// Decodes every row and hands outcomes to `emit` in input order.
template <class Emit>
void run_all(const RunConfig& cfg, const DecodeConfig& dc, const ModelPair& pair, const Vocabulary& vocab,
             const std::vector<Json>& rows, const CliOptions& opts, Emit&& emit) {
  unsigned threads = std::max(1U, opts.threads);
  if (threads > 1 && !pair_concurrent(pair)) {
    spdlog::warn("sources do not permit concurrent queries; decoding records sequentially");
    threads = 1;
  }
  for (std::size_t start = 0; start < rows.size(); start += threads) {
    const std::size_t end = std::min(rows.size(), start + threads);
    if (threads == 1) {
      emit(run_one(cfg, dc, pair, vocab, rows[start], start, opts));
      continue;
    }
    std::vector<std::future<Outcome>> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(std::async(std::launch::async,
                                 [&, i] { return run_one(cfg, dc, pair, vocab, rows[i], i, opts); }));
    }
    for (auto& f : batch) emit(f.get());
  }
}

Json decode_record(const Outcome& o, const std::string& hash, const RunConfig& cfg, const DecodeConfig& dc) {
  if (o.error) {
    Json doc = *o.error;
    doc["config_hash"] = hash;
    return doc;
  }
  Json doc = to_json(*o.result);
  doc["index"] = o.index;
  doc["config_hash"] = hash;
  doc["seed"] = cfg.seed;
  doc["scorer"] = std::string(to_string(dc.scorer));
  doc["strategy"] = std::string(to_string(dc.strategy));
  doc["image"] = o.input->prompt.image ? Json(o.input->prompt.image->id) : Json(nullptr);
  if (o.input->fields.contains("id")) doc["id"] = o.input->fields.at("id");
  return doc;
}

bool exact_match(const DecodeResult& r, const std::vector<std::string>& answers) {
  for (const auto& a : answers) {
    if (r.text == a) return true;
  }
  return false;
}

}  // namespace

int cmd_decode(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(opts.config, opts.seed);
    const std::string hash = config_hash(cfg);
    const auto rows = load_inputs(cfg);
    Sink sink(output_path(opts, cfg), out);
    const OpenSources src = open_sources(cfg);
    run_all(cfg, cfg.decode, src.pair(), *src.vocab, rows, opts,
            [&](const Outcome& o) { sink.write(decode_record(o, hash, cfg, cfg.decode)); });
    return kExitOk;
  });
}

int cmd_compare(const CliOptions& opts, const std::vector<std::string>& scorer_names, std::ostream& out,
                std::ostream& err) {
  return guarded(err, [&] {
    if (scorer_names.size() < 2) throw UsageError("compare needs at least two scorers");
    std::vector<ScorerKind> scorers;
    for (const auto& name : scorer_names) {
      try {
        scorers.push_back(parse_scorer(name));
      } catch (const ConfigError& e) {
        throw UsageError(e.message());
      }
    }
    const RunConfig cfg = load_run_config(opts.config, opts.seed);
    const std::string hash = config_hash(cfg);
    const auto rows = load_inputs(cfg);
    Sink sink(output_path(opts, cfg), out);
    const OpenSources src = open_sources(cfg);
    for (auto s : scorers) {
      if (s != ScorerKind::vlm_only && !src.text) throw ConfigError("compare: config has no text_source");
      if (s != ScorerKind::text_only && !src.vlm) throw ConfigError("compare: config has no vlm_source");
    }

    // outcomes[s][i]
    std::vector<std::vector<Outcome>> outcomes(scorers.size());
    for (std::size_t s = 0; s < scorers.size(); ++s) {
      DecodeConfig dc = cfg.decode;
      dc.scorer = scorers[s];
      run_all(cfg, dc, src.pair(), *src.vocab, rows, opts, [&](Outcome o) { outcomes[s].push_back(std::move(o)); });
    }

    std::map<std::string, std::size_t> agree;
    std::vector<std::size_t> correct(scorers.size(), 0);
    std::size_t graded = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Json per{{"index", i}, {"config_hash", hash}};
      Json cols = Json::object();
      bool has_answers = false;
      for (std::size_t s = 0; s < scorers.size(); ++s) {
        const auto& o = outcomes[s][i];
        const std::string name(to_string(scorers[s]));
        if (o.error) {
          cols[name] = *o.error;
          continue;
        }
        cols[name] = Json{{"tokens", o.result->tokens},
                          {"text", o.result->text},
                          {"final_score", o.result->final_score},
                          {"stop_reason", std::string(to_string(o.result->stop_reason))}};
        if (o.input->answers) {
          has_answers = true;
          if (exact_match(*o.result, *o.input->answers)) ++correct[s];
        }
        for (std::size_t t = 0; t < s; ++t) {
          const auto& other = outcomes[t][i];
          if (other.result && other.result->tokens == o.result->tokens) {
            ++agree[fmt::format("{}|{}", to_string(scorers[t]), name)];
          }
        }
      }
      if (has_answers) ++graded;
      per["outputs"] = cols;
      sink.write(per);
    }

    Json agreement = Json::object();
    for (std::size_t s = 0; s < scorers.size(); ++s) {
      for (std::size_t t = 0; t < s; ++t) {
        const auto key = fmt::format("{}|{}", to_string(scorers[t]), to_string(scorers[s]));
        agreement[key] = rows.empty() ? 1.0 : static_cast<double>(agree[key]) / static_cast<double>(rows.size());
      }
    }
    Json summary{{"config_hash", hash}, {"records", rows.size()}, {"scorers", scorer_names}, {"agreement", agreement}};
    if (graded > 0) {
      Json acc = Json::object();
      for (std::size_t s = 0; s < scorers.size(); ++s) {
        acc[std::string(to_string(scorers[s]))] = static_cast<double>(correct[s]) / static_cast<double>(graded);
      }
      summary["accuracy"] = acc;
    }
    sink.write(Json{{"summary", summary}});
    return kExitOk;
  });
}

namespace {

RunConfig apply_sweep_value(const RunConfig& base, const std::string& parameter, const std::string& text, Json& value) {
  RunConfig cfg = base;
  std::size_t used = 0;
  if (parameter == "alpha" || parameter == "tau") {
    double v = 0.0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size()) throw UsageError(fmt::format("sweep value '{}' is not a number", text));
    (parameter == "alpha" ? cfg.decode.fluency_threshold : cfg.decode.language_temperature) = v;
    cfg.decode.validate();
    value = v;
    return cfg;
  }
  if (parameter == "marginal_count") {
    long long n = 0;
    try {
      n = std::stoll(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || n <= 0) throw UsageError(fmt::format("sweep value '{}' is not a positive count", text));
    const auto count = static_cast<std::size_t>(n);
    if (cfg.marginal.scheme == MarginalScheme::random_sample) {
      const std::string pool = cfg.marginal.pool_dir;
      cfg.marginal = MarginalSpec::random_sample(cfg.resolve(pool), count, cfg.marginal.seed.value_or(cfg.seed));
      cfg.marginal.pool_dir = pool;
    } else {
      if (count > cfg.marginal.images.size()) {
        throw ConfigError(fmt::format("marginal_count {} exceeds the {} predefined images", count,
                                      cfg.marginal.images.size()));
      }
      cfg.marginal.images.resize(count);
    }
    cfg.decode.marginal_images = cfg.marginal.images;
    value = n;
    return cfg;
  }
  throw UsageError(fmt::format("unknown sweep parameter '{}' (expected alpha, tau or marginal_count)", parameter));
}

}  // namespace

int cmd_sweep(const CliOptions& opts, const std::string& parameter, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (values.empty()) throw UsageError("sweep needs at least one value");
    const RunConfig base = load_run_config(opts.config, opts.seed);
    std::vector<std::pair<RunConfig, Json>> variants;
    for (const auto& text : values) {
      Json value;
      RunConfig cfg = apply_sweep_value(base, parameter, text, value);
      variants.emplace_back(std::move(cfg), value);
    }
    const auto rows = load_inputs(base);
    Sink sink(output_path(opts, base), out);
    const OpenSources src = open_sources(base);

    for (const auto& [cfg, value] : variants) {
      const std::string hash = config_hash(cfg);
      double rep2 = 0, rep3 = 0, rep4 = 0, div = 0;
      std::size_t ok = 0, errors = 0, graded = 0, correct = 0;
      Json outputs = Json::array();
      run_all(cfg, cfg.decode, src.pair(), *src.vocab, rows, opts, [&](const Outcome& o) {
        if (o.error) {
          ++errors;
          outputs.push_back(nullptr);
          return;
        }
        const auto m = compute_metrics(o.result->tokens);
        rep2 += m.rep_2;
        rep3 += m.rep_3;
        rep4 += m.rep_4;
        div += m.diversity;
        ++ok;
        if (o.input->answers) {
          ++graded;
          if (exact_match(*o.result, *o.input->answers)) ++correct;
        }
        outputs.push_back(o.result->tokens);
      });
      auto mean = [&](double sum) { return ok == 0 ? Json(nullptr) : Json(sum / static_cast<double>(ok)); };
      Json row{{"parameter", parameter},
               {"value", value},
               {"config_hash", hash},
               {"records", rows.size()},
               {"errors", errors},
               {"rep_2", mean(rep2)},
               {"rep_3", mean(rep3)},
               {"rep_4", mean(rep4)},
               {"diversity", mean(div)},
               {"accuracy", graded == 0 ? Json(nullptr)
                                        : Json(static_cast<double>(correct) / static_cast<double>(graded))},
               {"outputs", outputs}};
      sink.write(row);
    }
    return kExitOk;
  });
}

int cmd_eval(const std::filesystem::path& input, const std::optional<std::filesystem::path>& output,
             std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto rows = read_jsonl(input);
    Sink sink(output, out);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Json& row = rows[i];
      const JsonReader r(row, input.string(), "", i + 1);
      if (row.is_object() && row.contains("error")) {
        sink.write(Json{{"index", i}, {"error", row.at("error")}});
        continue;
      }
      ContextTokens tokens;
      if (r.has("tokens")) {
        tokens = r.get_token_ids("tokens");
      } else if (r.has("text")) {
        // Words are interned in order of appearance; the metrics only see equality.
        std::map<std::string, TokenId> ids;
        std::istringstream words(r.get_string("text"));
        std::string w;
        while (words >> w) {
          auto [it, _] = ids.try_emplace(w, static_cast<TokenId>(ids.size()));
          tokens.push_back(it->second);
        }
      } else {
        r.fail("record has neither \"tokens\" nor \"text\"");
      }
      Json report = to_json(compute_metrics(tokens));
      report["index"] = i;
      sink.write(report);
    }
    return kExitOk;
  });
}

int cmd_trace(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!opts.output) throw UsageError("trace needs --output DIR");
    const std::filesystem::path dir = *opts.output;
    const RunConfig cfg = load_run_config(opts.config, opts.seed);
    const std::string hash = config_hash(cfg);
    const auto rows = load_inputs(cfg);
    const OpenSources src = open_sources(cfg);
    std::filesystem::create_directories(dir);

    std::optional<RecordingSource> text_rec, vlm_rec;
    if (src.text) text_rec.emplace(*src.text);
    if (src.vlm) vlm_rec.emplace(*src.vlm);
    const ModelPair pair{text_rec ? &*text_rec : nullptr, vlm_rec ? &*vlm_rec : nullptr};

    Sink sink(dir / "decode.jsonl", out);
    run_all(cfg, cfg.decode, pair, *src.vocab, rows, opts,
            [&](const Outcome& o) { sink.write(decode_record(o, hash, cfg, cfg.decode)); });

    RunConfig replay = cfg;
    replay.vocab.clear();
    replay.template_file.clear();
    replay.output.clear();
    replay.inputs = std::filesystem::absolute(cfg.resolve(cfg.inputs)).string();
    if (replay.marginal.scheme == MarginalScheme::random_sample) {
      replay.marginal.pool_dir = std::filesystem::absolute(cfg.resolve(cfg.marginal.pool_dir)).string();
    }
    Json summary{{"config_hash", hash}, {"directory", dir.string()}};
    if (text_rec) {
      summary["text_records"] = text_rec->save(dir / "text.trace.jsonl");
      replay.text_source = SourceSpec{SourceKind::trace, "text.trace.jsonl", {}};
    }
    if (vlm_rec) {
      summary["vlm_records"] = vlm_rec->save(dir / "vlm.trace.jsonl");
      replay.vlm_source = SourceSpec{SourceKind::trace, "vlm.trace.jsonl", {}};
    }
    write_text_file(dir / "replay.json", to_json(replay).dump(2) + "\n");
    out << dump_compact(Json{{"trace", summary}}) << '\n';
    return kExitOk;
  });
}

}  // namespace pmidecode::cli
