#include "xcond/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "xcond/config.hpp"
#include "xcond/error.hpp"
#include "xcond/io.hpp"

namespace xcond {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedTensor> layout(const Checkpoint& ck) {
  std::vector<NamedTensor> out;
  visit_tensors(ck.params, [&](const std::string& name, const Tensor& t) { out.push_back({name, &t}); });
  if (ck.optimizer) {
    visit_tensors(ck.optimizer->m, [&](const std::string& name, const Tensor& t) { out.push_back({"optimizer.m." + name, &t}); });
    visit_tensors(ck.optimizer->v, [&](const std::string& name, const Tensor& t) { out.push_back({"optimizer.v." + name, &t}); });
  }
  return out;
}

TrainRunConfig run_from_json(const json& j) {
  TrainRunConfig r;
  r.stage = j.at("stage").get<std::string>() == "finetune" ? Stage::finetune : Stage::pretrain;
  r.epochs = j.at("epochs").get<std::size_t>();
  r.batch_size = j.at("batch_size").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.weight_decay = j.at("weight_decay").get<double>();
  r.beta1 = j.at("beta1").get<double>();
  r.beta2 = j.at("beta2").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.eval_every = j.at("eval_every").get<std::size_t>();
  r.grad_clip = j.at("grad_clip").get<double>();
  r.valid_batch_size = j.at("valid_batch_size").get<std::size_t>();
  r.eval_seed = j.at("eval_seed").get<std::uint64_t>();
  r.mask_granularity = j.at("mask_granularity").get<std::string>() == "per_step" ? MaskGranularity::per_step
                                                                                  : MaskGranularity::per_epoch;
  if (j.contains("patience")) r.patience = j.at("patience").get<std::size_t>();
  if (j.contains("stop_metric")) r.stop_metric = j.at("stop_metric").get<std::string>() == "loss" ? StopMetric::loss : StopMetric::f1;
  return r;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.stage = j.at("stage").get<std::string>();
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  if (!j.at("run").is_null()) p.run = run_from_json(j.at("run"));
  p.epochs_run = j.at("epochs_run").get<std::size_t>();
  p.best_epoch = j.at("best_epoch").get<std::size_t>();
  p.stop_reason = j.at("stop_reason").get<std::string>();
  if (!j.at("parent_sha256").is_null()) p.parent_sha256 = j.at("parent_sha256").get<std::string>();
  p.parent = j.at("parent");
  return p;
}

struct Parsed {
  json manifest;
  std::string_view blob;
};

Parsed parse_container(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a checkpoint file (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t n = get_u64(p + 8);
  if (n > bytes.size() - 16) throw IntegrityError("checkpoint truncated inside the manifest");
  Parsed out;
  try {
    out.manifest = json::parse(bytes.substr(16, n));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("checkpoint manifest is not valid JSON: {}", e.what()));
  }
  out.blob = bytes.substr(16 + n);
  const json& m = out.manifest;
  if (!m.contains("format_version") || m["format_version"] != kCheckpointFormatVersion)
    throw FormatError("unsupported checkpoint format version");
  const auto expected = m.at("blob_length").get<std::uint64_t>();
  if (out.blob.size() < expected)
    throw IntegrityError(fmt::format("checkpoint blob truncated: {} of {} bytes", out.blob.size(), expected));
  if (out.blob.size() > expected)
    throw IntegrityError(fmt::format("checkpoint blob has {} trailing bytes", out.blob.size() - expected));
  const std::string actual = sha256_hex(out.blob);
  if (actual != m.at("blob_sha256").get<std::string>())
    throw IntegrityError(fmt::format("checkpoint blob hash mismatch (stored {}, computed {})",
                                     m.at("blob_sha256").get<std::string>(), actual));
  return out;
}

std::vector<TensorEntry> read_index(const json& m) {
  std::vector<TensorEntry> out;
  for (const json& e : m.at("tensors")) {
    TensorEntry t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<std::vector<std::size_t>>();
    t.offset = e.at("offset").get<std::uint64_t>();
    t.length = e.at("length").get<std::uint64_t>();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

json to_json(const Provenance& p) {
  json j;
  j["stage"] = p.stage;
  j["init_seed"] = p.init_seed;
  j["run"] = p.run ? to_json(*p.run) : json();
  j["epochs_run"] = p.epochs_run;
  j["best_epoch"] = p.best_epoch;
  j["stop_reason"] = p.stop_reason;
  j["parent_sha256"] = p.parent_sha256 ? json(*p.parent_sha256) : json();
  j["parent"] = p.parent;
  return j;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  ck.config.validate();
  std::string blob;
  json index = json::array();
  for (const NamedTensor& nt : layout(ck)) {
    const Tensor& t = *nt.tensor;
    const std::uint64_t offset = blob.size();
    for (double x : t.data) put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    index.push_back({{"name", nt.name}, {"shape", t.shape}, {"offset", offset}, {"length", blob.size() - offset}});
  }
  json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["config"] = to_json(ck.config);
  m["vocab"] = {{"sha256", ck.vocab_sha256}, {"file", ck.vocab_file}};
  m["provenance"] = to_json(ck.provenance);
  m["tensors"] = index;
  m["blob_length"] = blob.size();
  m["blob_sha256"] = sha256_hex(blob);
  if (ck.optimizer) {
    const AdamWHyperparams& h = ck.optimizer->hyper;
    m["optimizer"] = {{"step", ck.optimizer->step}, {"lr", h.lr},           {"beta1", h.beta1},
                      {"beta2", h.beta2},           {"epsilon", h.epsilon}, {"weight_decay", h.weight_decay}};
  } else {
    m["optimizer"] = nullptr;
  }
  const std::string manifest = m.dump(2);

  std::string out(kCheckpointMagic, 8);
  put_u64(out, manifest.size());
  out += manifest;
  out += blob;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const Parsed parsed = parse_container(bytes);
  const json& m = parsed.manifest;
  Checkpoint ck;
  try {
    ck.config = encoder_config_from_json(m.at("config"));
    ck.config.validate();
    ck.vocab_sha256 = m.at("vocab").at("sha256").get<std::string>();
    ck.vocab_file = m.at("vocab").at("file").get<std::string>();
    ck.provenance = provenance_from_json(m.at("provenance"));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bad checkpoint manifest: {}", e.what()));
  } catch (const PreconditionError& e) {
    throw FormatError(fmt::format("bad checkpoint config: {}", e.what()));
  }

  ck.params = Parameters::zeros(ck.config);
  if (!m.at("optimizer").is_null()) {
    const json& o = m.at("optimizer");
    AdamWHyperparams h{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                       o.at("epsilon").get<double>(), o.at("weight_decay").get<double>()};
    ck.optimizer = OptimizerState::fresh(ck.config, h);
    ck.optimizer->step = o.at("step").get<std::uint64_t>();
  }

  std::map<std::string, TensorEntry> entries;
  for (TensorEntry& e : read_index(m)) {
    const std::string name = e.name;
    if (!entries.emplace(name, std::move(e)).second) throw FormatError(fmt::format("tensor {} listed twice", name));
  }

  std::set<std::string> used;
  const auto* blob = reinterpret_cast<const unsigned char*>(parsed.blob.data());
  auto fill = [&](const std::string& name, Tensor& t) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError(fmt::format("tensor {} missing from checkpoint", name));
    const TensorEntry& e = it->second;
    if (e.shape != t.shape)
      throw FormatError(fmt::format("tensor {} has shape [{}], expected [{}]", name, fmt::join(e.shape, ", "),
                                    fmt::join(t.shape, ", ")));
    if (e.length != 4 * t.data.size() || e.offset > parsed.blob.size() || e.length > parsed.blob.size() - e.offset)
      throw FormatError(fmt::format("tensor {} has an inconsistent byte range", name));
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = static_cast<double>(std::bit_cast<float>(get_u32(blob + e.offset + 4 * i)));
    used.insert(name);
  };
  visit_tensors(ck.params, fill);
  if (ck.optimizer) {
    visit_tensors(ck.optimizer->m, [&](const std::string& name, Tensor& t) { fill("optimizer.m." + name, t); });
    visit_tensors(ck.optimizer->v, [&](const std::string& name, Tensor& t) { fill("optimizer.v." + name, t); });
  }
  for (const auto& [name, e] : entries)
    if (!used.count(name)) throw FormatError(fmt::format("unexpected tensor {} in checkpoint", name));
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

CheckpointSummary inspect_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Parsed parsed = parse_container(bytes);
  CheckpointSummary s;
  s.file_sha256 = sha256_hex(bytes);
  try {
    s.tensors = read_index(parsed.manifest);
    const json* p = &parsed.manifest.at("provenance");
    while (p->is_object()) {
      s.provenance_chain.push_back(*p);
      p = &p->at("parent");
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bad checkpoint manifest: {}", e.what()));
  }
  s.manifest = std::move(parsed.manifest);
  return s;
}

std::string format_summary(const CheckpointSummary& s) {
  const json& m = s.manifest;
  std::string out = fmt::format("checkpoint sha256 {}\nformat version {}\n", s.file_sha256, m["format_version"].dump());
  out += "config:\n";
  for (const auto& [k, v] : m["config"].items()) out += fmt::format("  {:<18} {}\n", k, v.dump());
  out += fmt::format("vocab: {} (sha256 {})\n", m["vocab"]["file"].get<std::string>(),
                     m["vocab"]["sha256"].get<std::string>());
  std::size_t count = 0;
  for (const TensorEntry& t : s.tensors) count += t.length / 4;
  out += fmt::format("tensors ({}, {} values):\n", s.tensors.size(), count);
  for (const TensorEntry& t : s.tensors)
    out += fmt::format("  {:<32} [{}]  offset {} length {}\n", t.name, fmt::join(t.shape, ", "), t.offset, t.length);
  out += "provenance:\n";
  for (std::size_t i = 0; i < s.provenance_chain.size(); ++i) {
    const json& p = s.provenance_chain[i];
    out += fmt::format("  [{}] stage {}", i, p["stage"].get<std::string>());
    if (p["run"].is_object()) {
      const json& r = p["run"];
      out += fmt::format(" seed {} lr {} batch {} epochs {} wd {}", r["seed"].dump(), r["lr"].dump(),
                         r["batch_size"].dump(), r["epochs"].dump(), r["weight_decay"].dump());
      if (r.contains("patience")) out += fmt::format(" patience {}", r["patience"].dump());
    }
    out += fmt::format(" epochs_run {} best_epoch {}\n", p["epochs_run"].dump(), p["best_epoch"].dump());
    if (p["parent_sha256"].is_string()) out += fmt::format("      parent sha256 {}\n", p["parent_sha256"].get<std::string>());
  }
  return out;
}

}  // namespace xcond
