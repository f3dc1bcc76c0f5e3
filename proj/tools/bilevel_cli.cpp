#include <iostream>

#include <CLI11.hpp>

#include "bilevel/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bilevel learning with inexact hypergradients"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("-c,--config", config, "INI config file")->required();

  auto* rates = app.add_subcommand("rates", "Sweep (p, q) cells and fit convergence rates");
  rates->add_option("-c,--config", config, "INI config file")->required();

  std::string level = "fast";
  auto* check = app.add_subcommand("check", "Run the oracle self-checks");
  check->add_option("-l,--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

  auto* exp = app.add_subcommand("export", "Convert run artifacts");
  exp->require_subcommand(1);
  std::vector<std::string> runlogs;
  std::string out_dir = "plots";
  int window = 50;
  auto* plots = exp->add_subcommand("plots", "Render SVG plots from runlog CSV files");
  plots->add_option("runlogs", runlogs, "runlog.csv files")->required()->check(CLI::ExistingFile);
  plots->add_option("-o,--out", out_dir, "output directory");
  plots->add_option("-w,--window", window, "running-average window for the loss curve")->check(CLI::PositiveNumber);
  std::string ckpt, json_out;
  auto* ck = exp->add_subcommand("checkpoint", "Dump a checkpoint as JSON");
  ck->add_option("checkpoint", ckpt, "BILEV01 file")->required()->check(CLI::ExistingFile);
  ck->add_option("-o,--out", json_out, "JSON output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bilevel::kExitInvalid;
  }

  if (run->parsed()) return bilevel::cmd_run(config, std::cout, std::cerr);
  if (rates->parsed()) return bilevel::cmd_rates(config, std::cout, std::cerr);
  if (check->parsed()) return bilevel::cmd_check(level, std::cout, std::cerr);
  if (plots->parsed()) {
    std::vector<std::filesystem::path> paths(runlogs.begin(), runlogs.end());
    return bilevel::cmd_export_plots(paths, out_dir, window, std::cout, std::cerr);
  }
  return bilevel::cmd_export_checkpoint(ckpt, json_out, std::cout, std::cerr);
}
