#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dcr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Detect-Critique-Refine pipeline and evaluation harness"};
  app.require_subcommand(1);

  dcr::cli::CliOptions options;
  std::string config_path;
  std::string strategy;
  std::int64_t seed = -1;
  std::string run_dir;
  std::string compare_dir;
  std::string input;
  std::string out_dir;
  std::string templates_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file (JSON)")->required();
    cmd->add_option("--seed", seed, "seed override");
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_flag("--dry-run", options.dry_run, "validate and print the call plan, no backend calls");
    cmd->add_flag("--frozen-clock", options.frozen_clock,
                  "freeze timestamps for byte-identical reruns");
  };

  CLI::App* refine = app.add_subcommand("refine", "run a refinement strategy over a corpus");
  add_common(refine);
  refine->add_option("--strategy", strategy, "strategy override (dr|feed_refine|detect_dr|dcr)");

  CLI::App* eval = app.add_subcommand("eval", "score a finished run");
  add_common(eval);
  eval->add_option("--run", run_dir, "run directory containing records.jsonl")->required();
  eval->add_option("--compare", compare_dir,
                   "second run directory for paired bootstrap significance");

  CLI::App* datagen = app.add_subcommand("datagen", "distill fine-tuning records from a corpus");
  add_common(datagen);

  CLI::App* compare_feedback =
      app.add_subcommand("compare-feedback", "match model feedback against reference feedback");
  add_common(compare_feedback);
  compare_feedback
      ->add_option("--input", input,
                   "jsonl rows with {sentence, human_feedback, model_feedback}")
      ->required();

  CLI::App* templates = app.add_subcommand("templates", "list prompt template checksums");
  templates->add_option("--write", templates_dir, "also write template files to this directory");

  CLI11_PARSE(app, argc, argv);

  options.config_path = config_path;
  if (!strategy.empty()) options.strategy_override = strategy;
  if (seed >= 0) options.seed_override = static_cast<std::uint64_t>(seed);
  if (!run_dir.empty()) options.run_dir = run_dir;
  if (!compare_dir.empty()) options.compare_dir = compare_dir;
  if (!input.empty()) options.input = input;
  if (!out_dir.empty()) options.out_dir = out_dir;

  if (refine->parsed()) return dcr::cli::cmd_refine(options);
  if (eval->parsed()) return dcr::cli::cmd_eval(options);
  if (datagen->parsed()) return dcr::cli::cmd_datagen(options);
  if (compare_feedback->parsed()) return dcr::cli::cmd_compare_feedback(options);
  if (templates->parsed()) {
    return dcr::cli::cmd_templates(templates_dir.empty()
                                       ? std::nullopt
                                       : std::optional<std::filesystem::path>(templates_dir));
  }
  return 1;
}
