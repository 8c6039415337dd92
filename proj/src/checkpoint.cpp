#include "udoc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace udoc {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint weights are written little-endian raw");

struct TableEntry {
  std::string name;
  const Scalar* data;
  Index rows, cols;
};

void append_refs(std::vector<TableEntry>& table, ModelParams& params, const std::string& prefix) {
  params.visit([&table, &prefix](const std::string& name, auto& t) {
    table.push_back(TableEntry{prefix + name, t.data(), t.rows(), t.cols()});
  });
}

std::string format_scalar(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const AdamState* adam, const CheckpointMeta& meta, const KvConfig& config,
                     const std::vector<NamedTensor>& extra) {
  std::filesystem::create_directories(dir);

  std::vector<TableEntry> table;
  append_refs(table, const_cast<ModelParams&>(params), "");
  if (adam != nullptr) {
    append_refs(table, const_cast<ModelParams&>(adam->m), "adam.m.");
    append_refs(table, const_cast<ModelParams&>(adam->v), "adam.v.");
  }
  for (const auto& nt : extra)
    table.push_back(TableEntry{nt.name, nt.value.data(), nt.value.rows(), nt.value.cols()});

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["kind"] = "checkpoint";
  manifest["layout"] = "column_major";
  json jmeta;
  jmeta["step"] = meta.step;
  jmeta["tau"] = format_scalar(meta.tau);
  jmeta["best_loss"] = format_scalar(meta.best_loss);
  jmeta["best_step"] = meta.best_step;
  jmeta["task"] = meta.task;
  jmeta["has_adam"] = adam != nullptr;
  jmeta["adam_step"] = adam != nullptr ? adam->step : 0;
  manifest["meta"] = std::move(jmeta);
  json jcfg = json::object();
  for (const auto& [k, v] : config.values) jcfg[k] = v;
  manifest["config"] = std::move(jcfg);

  json jtensors = json::array();
  std::size_t offset = 0;
  for (const auto& e : table) {
    json jt;
    jt["name"] = e.name;
    jt["shape"] = {e.rows, e.cols};
    jt["dtype"] = "f64";
    jt["offset"] = offset;
    offset += sizeof(Scalar) * static_cast<std::size_t>(e.rows * e.cols);
    jtensors.push_back(std::move(jt));
  }
  manifest["tensors"] = std::move(jtensors);

  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("checkpoint: cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write weights in '" + dir.string() + "'");
    for (const auto& e : table)
      out.write(reinterpret_cast<const char*>(e.data),
                static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(e.rows * e.cols)));
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw std::runtime_error("checkpoint: missing manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    min >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version");

  Checkpoint ckpt;
  const auto& jmeta = manifest.at("meta");
  ckpt.meta.step = jmeta.at("step").get<long>();
  ckpt.meta.tau = std::stod(jmeta.at("tau").get<std::string>());
  ckpt.meta.best_loss = std::stod(jmeta.at("best_loss").get<std::string>());
  ckpt.meta.best_step = jmeta.at("best_step").get<long>();
  ckpt.meta.task = jmeta.at("task").get<std::string>();
  for (const auto& [k, v] : manifest.at("config").items())
    ckpt.config.values[k] = v.get<std::string>();

  const RunConfig cfg = RunConfig::from_kv(ckpt.config);
  ckpt.params = init_model(cfg, 0);
  const bool has_adam = jmeta.at("has_adam").get<bool>();
  if (has_adam) {
    AdamState adam;
    adam.m = zero_like(ckpt.params);
    adam.v = zero_like(ckpt.params);
    adam.step = jmeta.at("adam_step").get<long>();
    ckpt.adam = std::move(adam);
  }

  std::ifstream win(dir / "weights.bin", std::ios::binary);
  if (!win) throw std::runtime_error("checkpoint: missing weights in '" + dir.string() + "'");

  // name -> mutable view
  std::vector<TensorRef> refs = tensor_refs(ckpt.params);
  std::vector<TensorRef> refs_m, refs_v;
  if (ckpt.adam) {
    refs_m = tensor_refs(ckpt.adam->m);
    refs_v = tensor_refs(ckpt.adam->v);
  }
  auto find_ref = [&](const std::string& name) -> TensorRef* {
    auto scan = [&name](std::vector<TensorRef>& v, const std::string& prefix) -> TensorRef* {
      if (name.rfind(prefix, 0) != 0) return nullptr;
      const std::string bare = name.substr(prefix.size());
      for (auto& r : v)
        if (r.name == bare) return &r;
      return nullptr;
    };
    if (auto* r = scan(refs_m, "adam.m.")) return r;
    if (auto* r = scan(refs_v, "adam.v.")) return r;
    if (auto* r = scan(refs, "")) return r;
    return nullptr;
  };

  for (const auto& jt : manifest.at("tensors")) {
    const auto name = jt.at("name").get<std::string>();
    const auto shape = jt.at("shape").get<std::vector<Index>>();
    const auto offset = jt.at("offset").get<std::size_t>();
    if (shape.size() != 2) throw std::runtime_error("checkpoint: bad tensor shape for " + name);
    const std::size_t bytes = sizeof(Scalar) * static_cast<std::size_t>(shape[0] * shape[1]);
    win.seekg(static_cast<std::streamoff>(offset));

    TensorRef* ref = find_ref(name);
    if (ref != nullptr) {
      if (ref->rows != shape[0] || ref->cols != shape[1])
        throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "'");
      win.read(reinterpret_cast<char*>(ref->data), static_cast<std::streamsize>(bytes));
    } else {
      NamedTensor nt;
      nt.name = name;
      nt.value.resize(shape[0], shape[1]);
      win.read(reinterpret_cast<char*>(nt.value.data()), static_cast<std::streamsize>(bytes));
      ckpt.extra.push_back(std::move(nt));
    }
    if (win.gcount() != static_cast<std::streamsize>(bytes))
      throw std::runtime_error("checkpoint: truncated weights for tensor '" + name + "'");
  }
  return ckpt;
}

std::string describe_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw std::runtime_error("checkpoint: missing manifest '" + manifest_path.string() + "'");
  json manifest;
  min >> manifest;
  std::ostringstream out;
  const auto& jmeta = manifest.at("meta");
  out << "checkpoint step " << jmeta.at("step").get<long>() << ", task "
      << jmeta.at("task").get<std::string>() << ", tau " << jmeta.at("tau").get<std::string>()
      << "\n";
  out << "tensors:\n";
  for (const auto& jt : manifest.at("tensors")) {
    const auto shape = jt.at("shape").get<std::vector<Index>>();
    out << "  " << jt.at("name").get<std::string>() << "  [" << shape[0] << " x " << shape[1]
        << "]  " << jt.at("dtype").get<std::string>() << "  @" << jt.at("offset").get<std::size_t>()
        << "\n";
  }
  return out.str();
}

}  // namespace udoc
