#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "dcr/config.hpp"
#include "dcr/model.hpp"
#include "dcr/runlog.hpp"

namespace dcr {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(DCR_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  Result r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config() {
  RunConfig cfg;
  ModelConfig& m = cfg.model;
  m.height = m.width = 8;
  m.encoder_hidden = 16;
  m.feature_dim = m.projector_hidden = m.cond_dim = m.time_dim = 8;
  m.denoiser_hidden = 32;
  m.timesteps = 20;
  cfg.train.stage0_steps = 60;
  cfg.train.stage1_steps = cfg.train.stage2_steps = 30;
  cfg.train.naive_steps = 40;
  cfg.train.batch_size = 4;
  cfg.data.synthetic = {3, 10, 8, 8, 7};
  cfg.eval.verify_batches = 3;
  cfg.eval.verify_batch_size = 6;
  cfg.eval.sandwich_instances = 50;
  return cfg;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dcr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string write_config(const RunConfig& cfg, const std::string& name = "cfg.json") {
    save_run_config(dir_ / name, cfg);
    return (dir_ / name).string();
  }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

TEST_F(Cli, UsageErrorsAreValidationFailures) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --bogus").code, 2);
  EXPECT_EQ(run("train --mode other --out " + p("x")).code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, GenDataIsDeterministic) {
  const std::string cfg = write_config(small_config());
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + p("a")).code, 0);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + p("b")).code, 0);
  for (const char* f : {"images.idx", "labels.idx", "manifest.json"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["count"], 30);

  ASSERT_EQ(run("gen-data --config " + cfg + " --seed 9 --out " + p("c")).code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "images.idx"), slurp(dir_ / "c" / "images.idx"));

  // The written files load back as the configured dataset.
  RunConfig idx = small_config();
  idx.data.source = "idx";
  idx.data.idx_images = p("a/images.idx");
  idx.data.idx_labels = p("a/labels.idx");
  const Dataset ds = load_dataset(idx.data);
  EXPECT_EQ(ds.size(), 30u);
  EXPECT_EQ(ds.num_classes, 3u);
}

TEST_F(Cli, GenDataRejectsOneClass) {
  RunConfig cfg = small_config();
  cfg.data.synthetic.num_classes = 1;
  const Result r = run("gen-data --config " + write_config(cfg) + " --out " + p("a"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("two classes"), std::string::npos) << r.output;
}

TEST_F(Cli, GenDataUnwritablePath) {
  std::ofstream(dir_ / "file") << "x";
  const Result r = run("gen-data --config " + write_config(small_config()) + " --out " + p("file/sub"));
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(Cli, TrainDcrWritesThreeCheckpoints) {
  const Result r = run("train --config " + write_config(small_config()) + " --out " + p("runs") + " --run-name a");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"stage0.ckpt", "stage1.ckpt", "stage2.ckpt", "runlog.jsonl", "config.json", "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "runs/a" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir_ / "runs/a/run.lock"));
  std::string stage;
  load_model(dir_ / "runs/a/stage1.ckpt", &stage);
  EXPECT_EQ(stage, "stage1");
  const RunLog log = RunLog::load(dir_ / "runs/a/runlog.jsonl");
  EXPECT_EQ(log.series("stage1", "loss_dcr").size(), 30u);
  EXPECT_EQ(log.series("stage2", "loss_dcr").size(), 30u);
}

TEST_F(Cli, TrainTwiceIsByteIdentical) {
  const std::string cfg = write_config(small_config());
  ASSERT_EQ(run("train --config " + cfg + " --out " + p("runs") + " --run-name a").code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --out " + p("runs") + " --run-name b").code, 0);
  for (const char* f : {"stage0.ckpt", "stage1.ckpt", "stage2.ckpt", "runlog.jsonl", "metrics.csv"}) {
    EXPECT_EQ(slurp(dir_ / "runs/a" / f), slurp(dir_ / "runs/b" / f)) << f;
  }
}

TEST_F(Cli, TimestampedRunDirectory) {
  const Result r = run("train --config " + write_config(small_config()) + " --seed 4 --out " + p("runs"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "runs")) {
    ++dirs;
    EXPECT_NE(e.path().filename().string().find("-seed4"), std::string::npos);
    // The flag wins over the config file.
    EXPECT_EQ(load_run_config(e.path() / "config.json").train.seed, 4u);
  }
  EXPECT_EQ(dirs, 1u);
}

TEST_F(Cli, TrainNaiveLogsConflictCosine) {
  const Result r =
      run("train --mode naive --config " + write_config(small_config()) + " --out " + p("runs") + " --run-name n");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "runs/n/naive.ckpt"));
  const RunLog log = RunLog::load(dir_ / "runs/n/runlog.jsonl");
  const auto cos = log.series("naive", "cos");
  EXPECT_EQ(cos.size(), 40u);
  for (double c : cos) {
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST_F(Cli, DivergenceExitsNonzeroWithLogFlushed) {
  RunConfig cfg = small_config();
  cfg.train.lr_stage0 = 1e12;
  const Result r = run("train --config " + write_config(cfg) + " --out " + p("runs") + " --run-name d");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("diverged"), std::string::npos) << r.output;
  const RunLog log = RunLog::load(dir_ / "runs/d/runlog.jsonl");
  EXPECT_FALSE(log.series("stage0", "loss_mse").empty());
  EXPECT_FALSE(fs::exists(dir_ / "runs/d/run.lock"));
}

TEST_F(Cli, KilledRunLeavesParseableLogAndLock) {
  RunConfig cfg = small_config();
  cfg.train.stage0_steps = 200000;
  const std::string config = write_config(cfg);
  const std::string out = p("runs");
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, 1);
    ::dup2(null, 2);
    ::execl(DCR_CLI_PATH, DCR_CLI_PATH, "train", "--config", config.c_str(), "--out", out.c_str(), "--run-name", "k",
            static_cast<char*>(nullptr));
    std::_Exit(127);
  }
  const fs::path log_path = dir_ / "runs/k/runlog.jsonl";
  for (int i = 0; i < 500; ++i) {
    if (fs::exists(log_path) && fs::file_size(log_path) > 4000) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status));

  // The last line may be cut mid-write; every complete line must parse.
  std::string text = slurp(log_path);
  text = text.substr(0, text.rfind('\n') + 1);
  const RunLog partial = RunLog::parse(text);
  EXPECT_GT(partial.records().size(), 5u);
  const auto losses = partial.series("stage0", "loss_mse");
  EXPECT_FALSE(losses.empty());

  // The stale lock keeps a second writer out of the same run directory.
  EXPECT_TRUE(fs::exists(dir_ / "runs/k/run.lock"));
  const Result again = run("train --config " + config + " --out " + out + " --run-name k");
  EXPECT_EQ(again.code, 3);
  EXPECT_NE(again.output.find("locked"), std::string::npos) << again.output;
}

TEST_F(Cli, EvalReportSchemaAndDeterminism) {
  const std::string cfg = write_config(small_config());
  ASSERT_EQ(run("train --config " + cfg + " --out " + p("runs") + " --run-name a").code, 0);
  const std::string ckpt = p("runs/a/stage2.ckpt");
  const Result first = run("eval --config " + cfg + " --checkpoint " + ckpt + " --out " + p("e1"));
  const Result second = run("eval --config " + cfg + " --checkpoint " + ckpt + " --out " + p("e2"));
  ASSERT_EQ(first.code, 0) << first.output;
  ASSERT_EQ(second.code, 0);
  const std::string csv = slurp(dir_ / "e1/metrics.csv");
  EXPECT_EQ(csv, slurp(dir_ / "e2/metrics.csv"));
  // The headers differ only in the recorded output directory.
  EXPECT_EQ(RunLog::load(dir_ / "e1/metrics.jsonl").records(), RunLog::load(dir_ / "e2/metrics.jsonl").records());
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "nmi,acc,ari,s_inner,s_inter,recon_mse");
  // Same numbers as the report written at the end of training.
  EXPECT_EQ(csv, slurp(dir_ / "runs/a/metrics.csv"));
  const RunLog log = RunLog::load(dir_ / "e1/metrics.jsonl");
  ASSERT_EQ(log.records().size(), 1u);
  EXPECT_EQ(log.records()[0].values.size(), 6u);
}

TEST_F(Cli, EvalErrors) {
  const std::string cfg = write_config(small_config());
  EXPECT_NE(run("eval --config " + cfg + " --checkpoint " + p("missing.ckpt")).code, 0);
  EXPECT_NE(run("eval --config " + cfg).code, 0);

  RunConfig wide = small_config();
  wide.model.height = wide.model.width = 12;
  wide.data.synthetic.height = wide.data.synthetic.width = 12;
  save_model(dir_ / "wide.ckpt", Model(wide.model, 1), "stage0");
  const Result r = run("eval --config " + cfg + " --checkpoint " + p("wide.ckpt") + " --out " + p("e"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("144"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("64"), std::string::npos) << r.output;

  std::ofstream(dir_ / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run("eval --config " + cfg + " --checkpoint " + p("junk.ckpt") + " --out " + p("e")).code, 3);
}

TEST_F(Cli, VerifyFreshModel) {
  const RunConfig c = small_config();
  const std::string cfg = write_config(c);
  save_model(dir_ / "fresh.ckpt", Model(c.model, 3), "init");
  const Result r = run("verify --config " + cfg + " --checkpoint " + p("fresh.ckpt") + " --out " + p("v"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(dir_ / "v/verify.json"));
  EXPECT_TRUE(j["ok"].get<bool>());
  EXPECT_LT(j["lemma1"]["max_abs_diff"].get<double>(), 1e-9);
  ASSERT_EQ(j["theorem1"]["batches"].size(), 3u);
  for (const auto& b : j["theorem1"]["batches"]) {
    for (const char* key : {"m", "L", "kappa", "eta"}) EXPECT_TRUE(b.contains(key)) << key;
    EXPECT_LE(b["m"].get<double>(), b["L"].get<double>());
  }
  EXPECT_EQ(j["sandwich"]["violations"], 0);
}

TEST_F(Cli, PlotNaiveLog) {
  ASSERT_EQ(run("train --mode naive --config " + write_config(small_config()) + " --out " + p("runs") +
                " --run-name n")
                .code,
            0);
  const Result r = run("plot --log " + p("runs/n/runlog.jsonl") + " --out " + p("plot"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"l_con", "l_rec", "cos"}) {
    std::ifstream in(dir_ / "plot" / (std::string(name) + ".tsv"));
    std::size_t rows = 0;
    double step = 0, value = 0;
    while (in >> step >> value) {
      ++rows;
      EXPECT_EQ(step, static_cast<double>(rows));
      if (std::string(name) == "cos") {
        EXPECT_GE(value, -1.0);
        EXPECT_LE(value, 1.0);
      }
    }
    EXPECT_EQ(rows, 40u) << name;
  }
  const std::string svg = slurp(dir_ / "plot/chart.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
}

TEST_F(Cli, PlotEmptyAndCorruptLogs) {
  std::ofstream(dir_ / "empty.jsonl").close();
  const Result r = run("plot --log " + p("empty.jsonl") + " --out " + p("plot"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"l_con.tsv", "l_rec.tsv", "cos.tsv"}) EXPECT_EQ(fs::file_size(dir_ / "plot" / name), 0u);
  EXPECT_TRUE(fs::exists(dir_ / "plot/chart.svg"));

  RunLog log("{}", 1);
  log.append({"step", "naive", 1, {{"cos", 0.5}}, {}});
  std::ofstream(dir_ / "bad.jsonl") << log.to_jsonl() << "{\"type\": \n";
  const Result bad = run("plot --log " + p("bad.jsonl") + " --out " + p("plot2"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("line 3"), std::string::npos) << bad.output;
}

}  // namespace
}  // namespace dcr
