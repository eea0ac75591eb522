#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dcr {

struct LogRecord {
  std::string type;  // "step" or "eval"
  std::string stage;
  std::size_t step = 0;
  std::map<std::string, double> values;
  std::vector<std::size_t> timesteps;

  bool operator==(const LogRecord&) const = default;
};

// Append-only experiment log. On disk it is JSON lines: a header line with the
// config snapshot and seed, then one line per record. Each line is flushed as
// it is written so an interrupted run leaves a parseable prefix.
class RunLog {
 public:
  static constexpr int kVersion = 1;

  RunLog() = default;
  RunLog(std::string config_json, std::uint64_t seed);

  void open(const std::filesystem::path& path);
  void close();
  void append(LogRecord record);

  const std::vector<LogRecord>& records() const { return records_; }
  std::vector<LogRecord> select(const std::string& type, const std::string& stage = {}) const;
  // Values of one key over the matching step records, in order.
  std::vector<double> series(const std::string& stage, const std::string& key) const;
  const std::string& config_json() const { return config_json_; }
  std::uint64_t seed() const { return seed_; }

  std::string header_line() const;
  static std::string record_line(const LogRecord& r);
  std::string to_jsonl() const;

  // Parse errors name the 1-based line number.
  static RunLog load(const std::filesystem::path& path);
  static RunLog parse(const std::string& text);

 private:
  std::string config_json_ = "{}";
  std::uint64_t seed_ = 0;
  std::vector<LogRecord> records_;
  std::unique_ptr<std::ofstream> out_;
};

}  // namespace dcr
