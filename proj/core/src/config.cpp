#include "dcr/config.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace dcr {

void RunConfig::validate() const {
  model.validate();
  train.validate();
  train.augment.validate(model.height, model.width);
  if (data.source == "synthetic") {
    if (data.synthetic.num_classes < 2) throw ValueError("data.num_classes must be at least 2 (clustering needs two classes)");
    if (data.synthetic.per_class == 0) throw ValueError("data.per_class must be positive");
    if (data.synthetic.height != model.height || data.synthetic.width != model.width || model.channels != 1) {
      throw ValueError("synthetic image size " + std::to_string(data.synthetic.height) + "x" +
                       std::to_string(data.synthetic.width) + " differs from model input " + std::to_string(model.height) +
                       "x" + std::to_string(model.width) + "x" + std::to_string(model.channels));
    }
  } else if (data.source == "idx") {
    for (const std::string& p : {data.idx_images, data.idx_labels}) {
      if (p.empty() || !std::filesystem::exists(p)) throw ValueError("IDX file not found: '" + p + "'");
    }
  } else {
    throw ValueError("data.source must be 'synthetic' or 'idx', got '" + data.source + "'");
  }
  if (!(data.eval_fraction > 0.0 && data.eval_fraction < 1.0)) throw ValueError("data.eval_fraction must lie in (0, 1)");
  if (eval.kmeans_restarts == 0 || eval.kmeans_max_iter == 0) throw ValueError("k-means needs restarts and iterations >= 1");
  if (eval.verify_batch_size < 2) throw ValueError("eval.verify_batch_size must be at least 2");
}

std::string to_json(const RunConfig& cfg) { return nlohmann::json(cfg).dump(2); }

std::string to_json(const ModelConfig& cfg) { return nlohmann::json(cfg).dump(); }

std::string to_json(const TrainConfig& cfg) { return nlohmann::json(cfg).dump(); }

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(std::string("config is not valid JSON: ") + e.what());
  }
  return j.get<RunConfig>();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write config file: " + path.string());
  out << to_json(cfg) << '\n';
}

Dataset load_dataset(const DataConfig& data) {
  if (data.source == "idx") return load_idx(data.idx_images, data.idx_labels);
  return generate_synthetic(data.synthetic);
}

}  // namespace dcr
