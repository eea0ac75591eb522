#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dcr::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;     // bad flags, config, inputs or shapes
inline constexpr int kExitRuntime = 3;     // I/O failure, divergence, locked run dir
inline constexpr int kExitViolations = 4;  // verify found counterexamples

struct CommonOptions {
  std::string config;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

struct TrainOptions {
  std::string mode = "dcr";
  std::string run_name;  // empty: timestamp plus seed
};

struct CheckpointOptions {
  std::string checkpoint;
};

struct PlotOptions {
  std::string log;
};

int cmd_gen_data(const CommonOptions& common);
int cmd_train(const CommonOptions& common, const TrainOptions& opt);
int cmd_eval(const CommonOptions& common, const CheckpointOptions& opt);
int cmd_verify(const CommonOptions& common, const CheckpointOptions& opt);
int cmd_plot(const CommonOptions& common, const PlotOptions& opt);

// Two-column series files plus one SVG line chart; exposed for the plot command.
struct Series {
  std::string name;
  std::string title;
  std::vector<std::pair<double, double>> points;
};
std::string render_svg(const std::vector<Series>& panels);

}  // namespace dcr::cli
