#include "dcr/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace dcr {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

void ModelConfig::validate() const {
  if (height < 8 || width < 8 || channels < 1) throw ValueError("model: image must be at least 8x8 with one channel");
  if (encoder_hidden == 0 || feature_dim == 0 || projector_hidden == 0 || cond_dim == 0 || denoiser_hidden == 0 ||
      time_dim == 0) {
    throw ValueError("model: layer widths must be positive");
  }
  if (timesteps < 1) throw ValueError("model: need at least one diffusion step");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  cfg.validate();
  schedule = build_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end, cfg.variance);
  encoder = Encoder({cfg.image_dim(), cfg.encoder_hidden, cfg.feature_dim}, seed);
  const ProjectorConfig pc{cfg.feature_dim, cfg.projector_hidden, cfg.cond_dim, cfg.projector_activation};
  projector = Projector(pc, seed, streams::kProjectorInit, "projector");
  reference_projector = Projector(pc, seed, streams::kReferenceProjectorInit, "reference_projector");
  denoiser = Denoiser({cfg.image_dim(), cfg.cond_dim, cfg.time_dim, cfg.denoiser_hidden, cfg.timesteps}, seed);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : encoder.parameters()) out.push_back(p);
  for (Parameter* p : projector.parameters()) out.push_back(p);
  for (Parameter* p : reference_projector.parameters()) out.push_back(p);
  for (Parameter* p : denoiser.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (const Parameter* p : encoder.parameters()) out.push_back(p);
  for (const Parameter* p : projector.parameters()) out.push_back(p);
  for (const Parameter* p : reference_projector.parameters()) out.push_back(p);
  for (const Parameter* p : denoiser.parameters()) out.push_back(p);
  return out;
}

namespace {

constexpr char kMagic[8] = {'D', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Parameter* CheckpointFile::find(const std::string& name) const {
  for (const Parameter& p : tensors) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::string serialize_checkpoint(const std::string& meta_json, const std::vector<const Parameter*>& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, meta_json);
  put<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    put_string(out, p->name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.shape().size()));
    for (std::size_t d : p->value.shape()) put<std::uint64_t>(out, d);
    for (double v : p->value.data()) put<double>(out, v);
  }
  return out;
}

CheckpointFile parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error("not a checkpoint file (bad magic)");
  }
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  CheckpointFile ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(ck.version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  ck.meta_json = r.get_string();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    r.need(n * sizeof(double));
    std::vector<double> data(n);
    for (double& v : data) v = r.get<double>();
    ck.tensors.emplace_back(std::move(name), Tensor(shape, std::move(data)));
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& meta_json,
                     const std::vector<const Parameter*>& params) {
  const std::string bytes = serialize_checkpoint(meta_json, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

void restore_parameters(const CheckpointFile& ckpt, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const Parameter* src = ckpt.find(p->name);
    if (!src) throw Error("checkpoint is missing tensor '" + p->name + "'");
    if (src->value.shape() != p->value.shape()) {
      throw ShapeError("restore", {p->value.shape(), src->value.shape()},
                       "tensor '" + p->name + "' expects " + shape_str(p->value.shape()) + " but checkpoint has " +
                           shape_str(src->value.shape()));
    }
    p->value = src->value;
    p->zero_grad();
  }
}

std::string parameter_bytes(const std::vector<const Parameter*>& params) { return serialize_checkpoint("", params); }

void save_model(const std::filesystem::path& path, const Model& model, const std::string& stage) {
  nlohmann::json meta;
  meta["format"] = "dcr-model";
  meta["stage"] = stage;
  meta["model"] = model.config;
  save_checkpoint(path, meta.dump(), model.parameters());
}

Model load_model(const std::filesystem::path& path, std::string* stage) {
  const CheckpointFile ck = load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ck.meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint metadata is not valid JSON: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "dcr-model") throw Error("checkpoint does not hold a model");
  Model model(meta.at("model").get<ModelConfig>(), 0);
  restore_parameters(ck, model.parameters());
  if (stage) *stage = meta.value("stage", "");
  return model;
}

}  // namespace dcr
