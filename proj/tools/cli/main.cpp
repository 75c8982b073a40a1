// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pmidecode");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("PMI_DECODE_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to off; only "off" itself should silence output.
    if (parsed != spdlog::level::off || std::string_view(level) == "off") {
      spdlog::set_level(parsed);
    } else {
      spdlog::warn("PMI_DECODE_LOG='{}' is not a log level; keeping 'warn'", level);
    }
  }
}

void add_common(CLI::App* cmd, pmidecode::cli::CliOptions& opts, std::string& output, bool config_required = true) {
  auto* config = cmd->add_option("--config", opts.config, "Run config (JSON)");
  if (config_required) config->required();
  cmd->add_option("--output", output, "Output path (overrides the config)");
  cmd->add_option("--seed", opts.seed, "Seed for random marginal draws");
  cmd->add_flag("--keep-going", opts.keep_going, "Record per-input source errors and continue");
  cmd->add_option("--threads", opts.threads, "Decode records concurrently when sources allow it")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace pmidecode::cli;
  setup_logging();

  CLI::App app{"pmidecode: PMI-reweighted decoding of a text model with a vision-language model"};
  app.require_subcommand(1);

  CliOptions opts;
  std::string output;
  std::vector<std::string> scorers;
  std::string parameter;
  std::vector<std::string> values;
  std::string eval_input;

  auto* decode = app.add_subcommand("decode", "Decode every input record");
  add_common(decode, opts, output);
  decode->add_flag("--explain", opts.explain, "Include per-step score components");

  auto* compare = app.add_subcommand("compare", "Decode with several scorers side by side");
  add_common(compare, opts, output);
  compare->add_option("--scorers", scorers, "Scorers to compare")
      ->delimiter(',')
      ->default_val(std::vector<std::string>{"vlis", "naive_ensemble", "vlm_only", "text_only"});

  auto* sweep = app.add_subcommand("sweep", "Decode once per hyperparameter value");
  add_common(sweep, opts, output);
  sweep->add_option("--parameter", parameter, "alpha, tau or marginal_count")->required();
  sweep->add_option("--values", values, "Comma-separated values")->delimiter(',')->required();

  auto* eval = app.add_subcommand("eval", "Repetition and diversity metrics per JSON line");
  eval->add_option("--input", eval_input, "JSON lines with tokens or text")->required();
  eval->add_option("--output", output, "Output path");

  auto* trace = app.add_subcommand("trace", "Record source traces for offline replay");
  add_common(trace, opts, output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (!output.empty()) opts.output = output;
  if (*decode) return cmd_decode(opts, std::cout, std::cerr);
  if (*compare) return cmd_compare(opts, scorers, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(opts, parameter, values, std::cout, std::cerr);
  if (*eval) return cmd_eval(eval_input, opts.output, std::cout, std::cerr);
  if (*trace) return cmd_trace(opts, std::cout, std::cerr);
  return kExitConfig;
}
