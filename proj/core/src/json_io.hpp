#pragma once
// nlohmann::json conversions for the configuration structs. Private to the
// library so the installed headers stay free of the JSON dependency.

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "dcr/config.hpp"

namespace dcr {

namespace json_detail {

inline void reject_unknown(const nlohmann::json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ValueError(std::string("config section '") + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ValueError(std::string("unknown config key '") + section + "." + k + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValueError(std::string("config key '") + key + "' has the wrong type");
  }
}

template <typename E, typename Parse>
void read_enum(const nlohmann::json& j, const char* key, E& out, Parse parse) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ValueError(std::string("config key '") + key + "' must be a string");
  out = parse(j.at(key).get<std::string>());
}

}  // namespace json_detail

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"height", c.height},
       {"width", c.width},
       {"channels", c.channels},
       {"encoder_hidden", c.encoder_hidden},
       {"feature_dim", c.feature_dim},
       {"projector_hidden", c.projector_hidden},
       {"cond_dim", c.cond_dim},
       {"projector_activation", to_string(c.projector_activation)},
       {"denoiser_hidden", c.denoiser_hidden},
       {"time_dim", c.time_dim},
       {"timesteps", c.timesteps},
       {"beta_start", c.beta_start},
       {"beta_end", c.beta_end},
       {"variance", to_string(c.variance)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "model", {"height", "width", "channels", "encoder_hidden", "feature_dim", "projector_hidden", "cond_dim",
                              "projector_activation", "denoiser_hidden", "time_dim", "timesteps", "beta_start", "beta_end",
                              "variance"});
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "channels", c.channels);
  read(j, "encoder_hidden", c.encoder_hidden);
  read(j, "feature_dim", c.feature_dim);
  read(j, "projector_hidden", c.projector_hidden);
  read(j, "cond_dim", c.cond_dim);
  read_enum(j, "projector_activation", c.projector_activation, activation_from_string);
  read(j, "denoiser_hidden", c.denoiser_hidden);
  read(j, "time_dim", c.time_dim);
  read(j, "timesteps", c.timesteps);
  read(j, "beta_start", c.beta_start);
  read(j, "beta_end", c.beta_end);
  read_enum(j, "variance", c.variance, variance_from_string);
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"max_shift", c.max_shift}, {"jitter_std", c.jitter_std}, {"flip_prob", c.flip_prob}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "augment", {"max_shift", "jitter_std", "flip_prob"});
  read(j, "max_shift", c.max_shift);
  read(j, "jitter_std", c.jitter_std);
  read(j, "flip_prob", c.flip_prob);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage0_steps", c.stage0_steps},
       {"stage1_steps", c.stage1_steps},
       {"stage2_steps", c.stage2_steps},
       {"naive_steps", c.naive_steps},
       {"batch_size", c.batch_size},
       {"lr_stage0", c.lr_stage0},
       {"lr_stage1", c.lr_stage1},
       {"lr_stage2", c.lr_stage2},
       {"lr_naive", c.lr_naive},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed},
       {"tau", c.tau},
       {"lambda_con", c.weights.lambda_con},
       {"lambda_rec", c.weights.lambda_rec},
       {"augment", c.augment},
       {"positives", to_string(c.positives)},
       {"naive_train_projector", c.naive_train_projector},
       {"schedule", to_string(c.schedule)},
       {"eval_every", c.eval_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "train", {"stage0_steps", "stage1_steps", "stage2_steps", "naive_steps", "batch_size", "lr_stage0",
                              "lr_stage1", "lr_stage2", "lr_naive", "weight_decay", "seed", "tau", "lambda_con",
                              "lambda_rec", "augment", "positives", "naive_train_projector", "schedule", "eval_every"});
  read(j, "stage0_steps", c.stage0_steps);
  read(j, "stage1_steps", c.stage1_steps);
  read(j, "stage2_steps", c.stage2_steps);
  read(j, "naive_steps", c.naive_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "lr_stage0", c.lr_stage0);
  read(j, "lr_stage1", c.lr_stage1);
  read(j, "lr_stage2", c.lr_stage2);
  read(j, "lr_naive", c.lr_naive);
  read(j, "weight_decay", c.weight_decay);
  read(j, "seed", c.seed);
  read(j, "tau", c.tau);
  read(j, "lambda_con", c.weights.lambda_con);
  read(j, "lambda_rec", c.weights.lambda_rec);
  read(j, "augment", c.augment);
  read_enum(j, "positives", c.positives, positive_mode_from_string);
  read(j, "naive_train_projector", c.naive_train_projector);
  read_enum(j, "schedule", c.schedule, stage_schedule_from_string);
  read(j, "eval_every", c.eval_every);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"source", c.source},
       {"num_classes", c.synthetic.num_classes},
       {"per_class", c.synthetic.per_class},
       {"height", c.synthetic.height},
       {"width", c.synthetic.width},
       {"data_seed", c.synthetic.seed},
       {"idx_images", c.idx_images},
       {"idx_labels", c.idx_labels},
       {"eval_fraction", c.eval_fraction}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "data", {"source", "num_classes", "per_class", "height", "width", "data_seed", "idx_images",
                             "idx_labels", "eval_fraction"});
  read(j, "source", c.source);
  read(j, "num_classes", c.synthetic.num_classes);
  read(j, "per_class", c.synthetic.per_class);
  read(j, "height", c.synthetic.height);
  read(j, "width", c.synthetic.width);
  read(j, "data_seed", c.synthetic.seed);
  read(j, "idx_images", c.idx_images);
  read(j, "idx_labels", c.idx_labels);
  read(j, "eval_fraction", c.eval_fraction);
}

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"kmeans_restarts", c.kmeans_restarts},
       {"kmeans_max_iter", c.kmeans_max_iter},
       {"verify_batches", c.verify_batches},
       {"verify_batch_size", c.verify_batch_size},
       {"sandwich_instances", c.sandwich_instances},
       {"probe_size", c.probe_size}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "eval", {"kmeans_restarts", "kmeans_max_iter", "verify_batches", "verify_batch_size",
                             "sandwich_instances", "probe_size"});
  read(j, "kmeans_restarts", c.kmeans_restarts);
  read(j, "kmeans_max_iter", c.kmeans_max_iter);
  read(j, "verify_batches", c.verify_batches);
  read(j, "verify_batch_size", c.verify_batch_size);
  read(j, "sandwich_instances", c.sandwich_instances);
  read(j, "probe_size", c.probe_size);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model}, {"train", c.train}, {"data", c.data}, {"eval", c.eval}, {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  using namespace json_detail;
  reject_unknown(j, "config", {"model", "train", "data", "eval", "out_dir"});
  read(j, "model", c.model);
  read(j, "train", c.train);
  read(j, "data", c.data);
  read(j, "eval", c.eval);
  read(j, "out_dir", c.out_dir);
}

}  // namespace dcr
