#include "commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dcr/config.hpp"
#include "dcr/evaluation.hpp"
#include "dcr/verify.hpp"

namespace dcr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

RunConfig resolve_config(const CommonOptions& common) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (common.seed) cfg.train.seed = *common.seed;
  if (common.out) cfg.out_dir = *common.out;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw Error("cannot write " + path.string());
}

void check_dims(const Dataset& ds, const ModelConfig& mc, const std::string& what) {
  if (ds.height != mc.height || ds.width != mc.width || ds.channels != mc.channels) {
    throw ValueError(fmt::format("{} expects {}x{}x{} images ({} values) but the dataset has {}x{}x{} ({} values)", what,
                                 mc.height, mc.width, mc.channels, mc.image_dim(), ds.height, ds.width, ds.channels,
                                 ds.image_dim()));
  }
}

// The split depends on the data alone, so every command sees the same eval images.
std::pair<Dataset, Dataset> load_split(const RunConfig& cfg, const ModelConfig& mc, const std::string& what) {
  Dataset ds = load_dataset(cfg.data);
  check_dims(ds, mc, what);
  if (ds.num_classes < 2) throw ValueError("clustering needs at least two classes in the dataset");
  return split_dataset(ds, cfg.data.eval_fraction, cfg.data.synthetic.seed);
}

// Exclusive lockfile in the run directory; removed on destruction.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / "run.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("run directory is locked by another writer (remove " + path_.string() + " if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

fs::path make_run_dir(const RunConfig& cfg, const std::string& run_name) {
  std::string name = run_name;
  if (name.empty()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    name = fmt::format("{}-seed{}", stamp, cfg.train.seed);
    fs::path base = fs::path(cfg.out_dir) / name;
    for (int k = 2; fs::exists(base); ++k) base = fs::path(cfg.out_dir) / fmt::format("{}-{}", name, k);
    fs::create_directories(base);
    return base;
  }
  const fs::path dir = fs::path(cfg.out_dir) / name;
  fs::create_directories(dir);
  return dir;
}

std::string metrics_csv(const EvalReport& r) {
  return fmt::format("nmi,acc,ari,s_inner,s_inter,recon_mse\n{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.nmi,
                     r.acc, r.ari, r.s_inner, r.s_inter, r.recon_mse);
}

LogRecord metrics_record(const std::string& stage, std::size_t step, const EvalReport& r) {
  return {"eval", stage, step,
          {{"nmi", r.nmi},
           {"acc", r.acc},
           {"ari", r.ari},
           {"s_inner", r.s_inner},
           {"s_inter", r.s_inter},
           {"recon_mse", r.recon_mse}},
          {}};
}

EvalOptions eval_options(const RunConfig& cfg) {
  return {cfg.eval.kmeans_restarts, cfg.eval.kmeans_max_iter, cfg.eval.probe_size};
}

fs::path output_dir(const CommonOptions& common, const RunConfig& cfg, const fs::path& fallback) {
  const fs::path dir = common.out ? fs::path(cfg.out_dir) : fallback;
  fs::create_directories(dir);
  return dir;
}

Model load_checked_model(const CheckpointOptions& opt, std::string* stage) {
  if (opt.checkpoint.empty()) throw ValueError("--checkpoint is required");
  if (!fs::is_regular_file(opt.checkpoint)) throw ValueError("checkpoint not found: " + opt.checkpoint);
  return load_model(opt.checkpoint, stage);
}

}  // namespace

int cmd_gen_data(const CommonOptions& common) {
  CommonOptions c = common;
  c.seed.reset();
  RunConfig cfg = resolve_config(c);
  if (cfg.data.source != "synthetic") throw ValueError("gen-data writes synthetic data; set data.source to \"synthetic\"");
  if (common.seed) cfg.data.synthetic.seed = *common.seed;
  cfg.validate();
  const Dataset ds = generate_synthetic(cfg.data.synthetic);
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  write_idx(ds, dir / "images.idx", dir / "labels.idx");

  const SyntheticSpec& s = cfg.data.synthetic;
  ordered_json manifest;
  manifest["generator"] = "synthetic";
  manifest["seed"] = s.seed;
  manifest["spec"] = {{"num_classes", s.num_classes},
                      {"per_class", s.per_class},
                      {"height", s.height},
                      {"width", s.width}};
  manifest["count"] = ds.size();
  manifest["channels"] = ds.channels;
  manifest["images"] = "images.idx";
  manifest["labels"] = "labels.idx";
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  spdlog::info("wrote {} images of {} classes to {}", ds.size(), ds.num_classes, dir.string());
  return kExitOk;
}

int cmd_train(const CommonOptions& common, const TrainOptions& opt) {
  if (opt.mode != "dcr" && opt.mode != "naive") throw ValueError("--mode must be dcr or naive, got " + opt.mode);
  const RunConfig cfg = resolve_config(common);
  auto [train, eval] = load_split(cfg, cfg.model, "the model config");

  const fs::path dir = make_run_dir(cfg, opt.run_name);
  RunLock lock(dir);
  std::cout << dir.string() << "\n";
  save_run_config(dir / "config.json", cfg);

  RunLog log(to_json(cfg), cfg.train.seed);
  log.open(dir / "runlog.jsonl");
  Model model(cfg.model, cfg.train.seed);
  Trainer trainer(model, train, eval, cfg.train, log);
  trainer.on_step = [](const std::string& stage, std::size_t step) {
    if (step % 100 == 0) spdlog::info("{} step {}", stage, step);
    else spdlog::trace("{} step {}", stage, step);
  };

  const StageResult s0 = trainer.pretrain_denoiser();
  spdlog::info("stage0 held-out mse {:.6f} -> {:.6f}", s0.eval_before, s0.eval_after);
  save_model(dir / "stage0.ckpt", model, "stage0");

  std::string last;
  if (opt.mode == "dcr") {
    if (cfg.train.schedule == StageSchedule::kTwoStage) {
      const StageResult s1 = trainer.train_stage1();
      spdlog::info("stage1 held-out dcr {:.6f} -> {:.6f}", s1.eval_before, s1.eval_after);
      save_model(dir / "stage1.ckpt", model, "stage1");
      const StageResult s2 = trainer.train_stage2();
      spdlog::info("stage2 held-out dcr {:.6f} -> {:.6f}", s2.eval_before, s2.eval_after);
      save_model(dir / "stage2.ckpt", model, "stage2");
      last = "stage2";
    } else {
      const StageResult e = trainer.train_end_to_end();
      spdlog::info("end-to-end held-out dcr {:.6f} -> {:.6f}", e.eval_before, e.eval_after);
      save_model(dir / "end_to_end.ckpt", model, "end_to_end");
      last = "end_to_end";
    }
  } else {
    const NaiveResult r = trainer.train_naive();
    spdlog::info("naive held-out mse {:.6f} -> {:.6f}; negative cosine on {:.1f}% of steps ({:.1f}% in the second half)",
                 r.stage.eval_before, r.stage.eval_after, 100.0 * r.negative_fraction,
                 100.0 * r.negative_fraction_second_half);
    save_model(dir / "naive.ckpt", model, "naive");
    last = "naive";
  }

  const EvalReport report = evaluate_model(model, eval, cfg.train.seed, eval_options(cfg));
  log.append(metrics_record(last, 0, report));
  log.close();
  write_file(dir / "metrics.csv", metrics_csv(report));
  spdlog::info("nmi {:.4f} acc {:.4f} ari {:.4f} recon_mse {:.6f}", report.nmi, report.acc, report.ari, report.recon_mse);
  return kExitOk;
}

int cmd_eval(const CommonOptions& common, const CheckpointOptions& opt) {
  const RunConfig cfg = resolve_config(common);
  std::string stage;
  Model model = load_checked_model(opt, &stage);
  auto [train, eval] = load_split(cfg, model.config, "checkpoint " + opt.checkpoint);
  const EvalReport report = evaluate_model(model, eval, cfg.train.seed, eval_options(cfg));

  const fs::path dir = output_dir(common, cfg, fs::path(opt.checkpoint).parent_path());
  const std::string csv = metrics_csv(report);
  write_file(dir / "metrics.csv", csv);
  RunLog log(to_json(cfg), cfg.train.seed);
  log.append(metrics_record(stage, 0, report));
  write_file(dir / "metrics.jsonl", log.to_jsonl());
  std::cout << csv;
  return kExitOk;
}

int cmd_verify(const CommonOptions& common, const CheckpointOptions& opt) {
  const RunConfig cfg = resolve_config(common);
  std::string stage;
  Model model = load_checked_model(opt, &stage);
  auto [train, eval] = load_split(cfg, model.config, "checkpoint " + opt.checkpoint);

  VerifyOptions vo;
  vo.batches = cfg.eval.verify_batches;
  vo.batch_size = std::min(cfg.eval.verify_batch_size, eval.size());
  vo.sandwich_instances = cfg.eval.sandwich_instances;
  vo.tau = cfg.train.tau;
  vo.augment = cfg.train.augment;
  const VerifyReport r = verify_model(model, eval, vo, cfg.train.seed);

  ordered_json j;
  j["checkpoint"] = opt.checkpoint;
  j["stage"] = stage;
  j["lemma1"] = {{"sets", r.lemma1_sets}, {"max_abs_diff", r.lemma1_max_diff}};
  ordered_json batches = ordered_json::array();
  for (const Theorem1BatchReport& b : r.theorem1) {
    batches.push_back({{"batch", b.batch},
                       {"t", b.t},
                       {"m", b.estimate.m},
                       {"L", b.estimate.L},
                       {"kappa", b.estimate.kappa},
                       {"eta", b.estimate.eta},
                       {"inner_lhs", b.check.inner_lhs},
                       {"inner_rhs", b.check.inner_rhs},
                       {"inter_lhs", b.check.inter_lhs},
                       {"inter_rhs", b.check.inter_rhs},
                       {"pass", b.check.pass}});
  }
  j["theorem1"] = {{"violations", r.theorem1_violations}, {"batches", batches}};
  j["sandwich"] = {{"checked", r.sandwich_checked},
                   {"rejected", r.sandwich_rejected},
                   {"violations", r.sandwich_violations},
                   {"min_lower_margin", r.sandwich_min_lower_margin},
                   {"min_upper_margin", r.sandwich_min_upper_margin}};
  j["violations"] = r.violations;
  j["ok"] = r.ok();

  const fs::path dir = output_dir(common, cfg, fs::path(opt.checkpoint).parent_path());
  write_file(dir / "verify.json", j.dump(2) + "\n");

  std::cout << fmt::format("lemma1: {} sets, max |lhs - rhs| = {:.3g}\n", r.lemma1_sets, r.lemma1_max_diff);
  std::cout << "theorem1: batch t m L kappa eta pass\n";
  for (const Theorem1BatchReport& b : r.theorem1) {
    std::cout << fmt::format("  {} {} {:.6g} {:.6g} {:.6g} {:.6g} {}\n", b.batch, b.t, b.estimate.m, b.estimate.L,
                             b.estimate.kappa, b.estimate.eta, b.check.pass ? "yes" : "NO");
  }
  std::cout << fmt::format("sandwich: {} checked, {} rejected, {} violations\n", r.sandwich_checked, r.sandwich_rejected,
                           r.sandwich_violations);
  if (!r.ok()) {
    for (const std::string& v : r.violations) std::cerr << "violation: " << v << "\n";
    if (r.lemma1_max_diff >= 1e-9) std::cerr << "violation: lemma1 max diff " << r.lemma1_max_diff << "\n";
    return kExitViolations;
  }
  return kExitOk;
}

int cmd_plot(const CommonOptions& common, const PlotOptions& opt) {
  if (opt.log.empty()) throw ValueError("--log is required");
  RunLog log;
  try {
    log = RunLog::load(opt.log);
  } catch (const Error& e) {
    throw ValueError(e.what());
  }
  const fs::path dir = common.out ? fs::path(*common.out) : fs::path(opt.log).parent_path();
  fs::create_directories(dir);

  std::vector<Series> panels = {{"l_con", "contrastive loss", {}}, {"l_rec", "reconstruction loss", {}},
                                {"cos", "cos(g_con, g_rec)", {}}};
  for (const LogRecord& r : log.select("step", "naive")) {
    for (Series& s : panels) {
      const auto it = r.values.find(s.name);
      if (it != r.values.end()) s.points.emplace_back(static_cast<double>(r.step), it->second);
    }
  }
  for (const Series& s : panels) {
    std::string text;
    for (const auto& [x, y] : s.points) text += fmt::format("{}\t{:.17g}\n", x, y);
    write_file(dir / (s.name + ".tsv"), text);
  }
  write_file(dir / "chart.svg", render_svg(panels));
  spdlog::info("wrote {} points per series to {}", panels[0].points.size(), dir.string());
  return kExitOk;
}

}  // namespace dcr::cli
