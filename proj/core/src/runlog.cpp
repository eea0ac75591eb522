#include "dcr/runlog.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcr/tensor.hpp"

namespace dcr {

using nlohmann::json;

RunLog::RunLog(std::string config_json, std::uint64_t seed) : config_json_(std::move(config_json)), seed_(seed) {
  // Normalize so the header round-trips byte for byte.
  config_json_ = json::parse(config_json_).dump();
}

void RunLog::open(const std::filesystem::path& path) {
  out_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*out_) throw Error("cannot open run log for writing: " + path.string());
  *out_ << header_line() << '\n';
  for (const LogRecord& r : records_) *out_ << record_line(r) << '\n';
  out_->flush();
}

void RunLog::close() { out_.reset(); }

void RunLog::append(LogRecord record) {
  if (out_) {
    *out_ << record_line(record) << '\n';
    out_->flush();
  }
  records_.push_back(std::move(record));
}

std::vector<LogRecord> RunLog::select(const std::string& type, const std::string& stage) const {
  std::vector<LogRecord> out;
  for (const LogRecord& r : records_) {
    if (r.type == type && (stage.empty() || r.stage == stage)) out.push_back(r);
  }
  return out;
}

std::vector<double> RunLog::series(const std::string& stage, const std::string& key) const {
  std::vector<double> out;
  for (const LogRecord& r : records_) {
    if (r.type != "step" || r.stage != stage) continue;
    auto it = r.values.find(key);
    if (it != r.values.end()) out.push_back(it->second);
  }
  return out;
}

std::string RunLog::header_line() const {
  json h;
  h["type"] = "header";
  h["version"] = kVersion;
  h["seed"] = seed_;
  h["config"] = json::parse(config_json_);
  return h.dump();
}

std::string RunLog::record_line(const LogRecord& r) {
  json j;
  j["type"] = r.type;
  j["stage"] = r.stage;
  j["step"] = r.step;
  json values = json::object();
  for (const auto& [k, v] : r.values) values[k] = std::isfinite(v) ? json(v) : json(nullptr);
  j["values"] = std::move(values);
  if (!r.timesteps.empty()) j["t"] = r.timesteps;
  return j.dump();
}

std::string RunLog::to_jsonl() const {
  std::string s = header_line() + '\n';
  for (const LogRecord& r : records_) s += record_line(r) + '\n';
  return s;
}

RunLog RunLog::parse(const std::string& text) {
  RunLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [lineno](const std::string& what) { return Error("run log line " + std::to_string(lineno) + ": " + what); };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(std::string("malformed record (") + e.what() + ")");
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (have_header) throw fail("duplicate header");
        if (j.at("version").get<int>() != kVersion) throw fail("unsupported version");
        log.seed_ = j.at("seed").get<std::uint64_t>();
        log.config_json_ = j.at("config").dump();
        have_header = true;
        continue;
      }
      if (!have_header) throw fail("record before header");
      LogRecord r;
      r.type = type;
      r.stage = j.at("stage").get<std::string>();
      r.step = j.at("step").get<std::size_t>();
      for (const auto& [k, v] : j.at("values").items()) {
        r.values[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      }
      if (j.contains("t")) r.timesteps = j.at("t").get<std::vector<std::size_t>>();
      log.records_.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw fail(std::string("bad field (") + e.what() + ")");
    }
  }
  return log;
}

RunLog RunLog::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read run log: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace dcr
