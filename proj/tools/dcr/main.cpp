#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "dcr/tensor.hpp"

namespace {

using namespace dcr::cli;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("dcr");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  const char* level = std::getenv("DCR_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const dcr::ShapeError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const dcr::ValueError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config, "JSON run config; missing keys take defaults");
  cmd->add_option("--seed", common.seed, "Seed override (data seed for gen-data, training seed otherwise)");
  cmd->add_option("--out", common.out, "Output directory override");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Diffusion-based contrastive representation toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train;
  CheckpointOptions ckpt;
  PlotOptions plot;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as IDX files plus a manifest");
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "Stage 0 then the DCR stages, or the naive joint-loss baseline");
  add_common(tr, common);
  tr->add_option("--mode", train.mode, "dcr or naive")->capture_default_str();
  tr->add_option("--run-name", train.run_name, "Run directory name (default: UTC timestamp and seed)");

  auto* ev = app.add_subcommand("eval", "Clustering metrics, scatter and reconstruction probe for a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", ckpt.checkpoint, "Checkpoint file")->required();

  auto* ve = app.add_subcommand("verify", "Check the scatter and sandwich bounds on a checkpoint");
  add_common(ve, common);
  ve->add_option("--checkpoint", ckpt.checkpoint, "Checkpoint file")->required();

  auto* pl = app.add_subcommand("plot", "Loss and gradient-cosine series plus an SVG chart from a run log");
  add_common(pl, common);
  pl->add_option("--log", plot.log, "runlog.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (gen->parsed()) return guarded([&] { return cmd_gen_data(common); });
  if (tr->parsed()) return guarded([&] { return cmd_train(common, train); });
  if (ev->parsed()) return guarded([&] { return cmd_eval(common, ckpt); });
  if (ve->parsed()) return guarded([&] { return cmd_verify(common, ckpt); });
  return guarded([&] { return cmd_plot(common, plot); });
}
