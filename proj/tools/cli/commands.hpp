// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace pmidecode::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitSource = 2;
inline constexpr int kExitInternal = 3;

struct CliOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output;  // overrides the config's output
  bool explain = false;
  bool keep_going = false;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;  // records decoded concurrently when sources allow it
};

int exit_code_for(const Error& e);

/// Machine-readable description of a failure, one JSON object.
Json error_record(const Error& e, std::optional<std::size_t> index = std::nullopt);

/// Each command writes JSON lines to the configured output (or `out` when
/// none is set) and error records to `err`. Exceptions never escape.
int cmd_decode(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmd_compare(const CliOptions& opts, const std::vector<std::string>& scorers, std::ostream& out,
                std::ostream& err);
int cmd_sweep(const CliOptions& opts, const std::string& parameter, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err);
/// Reads JSON lines holding "tokens" (ids) or "text" (whitespace words).
int cmd_eval(const std::filesystem::path& input, const std::optional<std::filesystem::path>& output,
             std::ostream& out, std::ostream& err);
/// Decodes every input through recording wrappers and writes, into
/// `opts.output` (a directory): text.trace.jsonl, vlm.trace.jsonl,
/// decode.jsonl and replay.json, a config that replays the run from the traces.
int cmd_trace(const CliOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace pmidecode::cli
