// SPDX-License-Identifier: Apache-2.0
#include "lorahub/hub.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lorahub/digest.hpp"
#include "lorahub/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace lorahub {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kIndexFile = "registry.json";
constexpr const char* kModuleExt = ".lora";

void put_u64_le(std::vector<unsigned char>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::vector<unsigned char>& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* p) {
  const uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

void write_file_atomic(const fs::path& target, const void* data, size_t len) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open '" + tmp.string() + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out) throw StorageError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw StorageError("rename '" + tmp.string() + "' -> '" + target.string() + "': " +
                             ec.message());
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

bool valid_module_name(const std::string& name) {
  if (name.empty() || name.size() > 128) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return name != "." && name != "..";
}

json index_to_json(const RegistryIndex& index) {
  json entries = json::array();
  for (const IndexEntry& e : index.entries) {
    json layers = json::array();
    for (const LayerShape& l : e.layers) {
      layers.push_back({{"name", l.name}, {"d", l.d}, {"k", l.k}});
    }
    entries.push_back({{"name", e.name},
                       {"task_id", e.task_id},
                       {"rank", e.rank},
                       {"layers", layers},
                       {"path", e.path},
                       {"checksum", e.checksum}});
  }
  return json{{"format_version", index.format_version}, {"entries", entries}};
}

RegistryIndex index_from_json(const json& j) {
  RegistryIndex index;
  index.format_version = j.at("format_version").get<int>();
  if (index.format_version != kFormatVersion) {
    throw FormatError("registry index format_version " + std::to_string(index.format_version) +
                      " is not supported");
  }
  for (const json& je : j.at("entries")) {
    IndexEntry e;
    e.name = je.at("name").get<std::string>();
    e.task_id = je.at("task_id").get<std::string>();
    e.rank = je.at("rank").get<int>();
    for (const json& jl : je.at("layers")) {
      e.layers.push_back({jl.at("name").get<std::string>(), jl.at("d").get<int>(),
                          jl.at("k").get<int>()});
    }
    e.path = je.at("path").get<std::string>();
    e.checksum = je.at("checksum").get<uint64_t>();
    index.entries.push_back(std::move(e));
  }
  return index;
}

void store_index(const RegistryIndex& index, const fs::path& dir) {
  const std::string text = index_to_json(index).dump(2) + "\n";
  write_file_atomic(dir / kIndexFile, text.data(), text.size());
}

IndexEntry entry_for(const LoraModule& module, const std::string& rel_path, uint64_t checksum) {
  IndexEntry e;
  e.name = module.name;
  e.task_id = module.task_id;
  e.rank = module.rank;
  for (const LoraLayer& l : module.layers) {
    e.layers.push_back({l.name, l.factors.a.rows(), l.factors.b.cols()});
  }
  e.path = rel_path;
  e.checksum = checksum;
  return e;
}

}  // namespace

const IndexEntry* RegistryIndex::find(const std::string& name) const {
  for (const IndexEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<unsigned char> serialize_module(const LoraModule& module) {
  check_module_invariants(module);
  json layers = json::array();
  uint64_t offset = 0;
  for (const LoraLayer& l : module.layers) {
    const uint64_t a_bytes = static_cast<uint64_t>(l.factors.a.data().size()) * 8;
    const uint64_t b_bytes = static_cast<uint64_t>(l.factors.b.data().size()) * 8;
    layers.push_back({{"name", l.name},
                      {"d", l.factors.a.rows()},
                      {"k", l.factors.b.cols()},
                      {"a_offset", offset},
                      {"b_offset", offset + a_bytes}});
    offset += a_bytes + b_bytes;
  }
  const json header = {{"format_version", kFormatVersion},
                       {"name", module.name},
                       {"task_id", module.task_id},
                       {"rank", module.rank},
                       {"metadata",
                        {{"seed", module.meta.seed},
                         {"config_digest", module.meta.config_digest},
                         {"created", module.meta.created}}},
                       {"layers", layers}};
  const std::string header_text = header.dump();

  std::vector<unsigned char> bytes;
  bytes.reserve(8 + header_text.size() + offset);
  put_u64_le(bytes, header_text.size());
  bytes.insert(bytes.end(), header_text.begin(), header_text.end());
  for (const LoraLayer& l : module.layers) {
    for (double v : l.factors.a.data()) put_f64_le(bytes, v);
    for (double v : l.factors.b.data()) put_f64_le(bytes, v);
  }
  return bytes;
}

LoraModule parse_module(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8) throw CorruptionError("module file truncated: no header length");
  const uint64_t header_len = get_u64_le(bytes.data());
  if (bytes.size() < 8 + header_len) throw CorruptionError("module file truncated: header");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("module header is not valid JSON: ") + e.what());
  }

  LoraModule module;
  try {
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError("module format_version " +
                        std::to_string(header.at("format_version").get<int>()) +
                        " is not supported");
    }
    module.name = header.at("name").get<std::string>();
    module.task_id = header.at("task_id").get<std::string>();
    module.rank = header.at("rank").get<int>();
    const json& meta = header.at("metadata");
    module.meta.seed = meta.at("seed").get<uint64_t>();
    module.meta.config_digest = meta.at("config_digest").get<std::string>();
    module.meta.created = meta.at("created").get<std::string>();

    const unsigned char* payload = bytes.data() + 8 + header_len;
    const uint64_t payload_len = bytes.size() - 8 - header_len;
    for (const json& jl : header.at("layers")) {
      const std::string lname = jl.at("name").get<std::string>();
      const int d = jl.at("d").get<int>();
      const int k = jl.at("k").get<int>();
      if (d < 1 || k < 1 || module.rank < 1) {
        throw FormatError("layer '" + lname + "': non-positive dims");
      }
      const uint64_t a_off = jl.at("a_offset").get<uint64_t>();
      const uint64_t b_off = jl.at("b_offset").get<uint64_t>();
      const uint64_t a_count = static_cast<uint64_t>(d) * static_cast<uint64_t>(module.rank);
      const uint64_t b_count = static_cast<uint64_t>(module.rank) * static_cast<uint64_t>(k);
      if (b_off != a_off + a_count * 8) {
        throw FormatError("layer '" + lname +
                          "': factor offsets disagree with rank " + std::to_string(module.rank) +
                          " (A/B payload mismatch)");
      }
      if (a_off + (a_count + b_count) * 8 > payload_len) {
        throw CorruptionError("module file truncated: layer '" + lname + "' payload");
      }
      Matrix a(d, module.rank);
      Matrix b(module.rank, k);
      for (size_t i = 0; i < a_count; ++i) a.data()[i] = get_f64_le(payload + a_off + i * 8);
      for (size_t i = 0; i < b_count; ++i) b.data()[i] = get_f64_le(payload + b_off + i * 8);
      module.layers.push_back({lname, {std::move(a), std::move(b)}});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("module header is missing fields: ") + e.what());
  }
  check_module_invariants(module);
  return module;
}

RegistryIndex load_index(const fs::path& dir) {
  const fs::path file = dir / kIndexFile;
  if (!fs::exists(file)) return RegistryIndex{};
  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const json::exception& e) {
    throw FormatError("registry index is not valid JSON: " + std::string(e.what()));
  }
  try {
    return index_from_json(j);
  } catch (const json::exception& e) {
    throw FormatError("registry index is missing fields: " + std::string(e.what()));
  }
}

ModuleRecord save_module(const LoraModule& module, const fs::path& dir) {
  if (!valid_module_name(module.name)) {
    throw FormatError("module name '" + module.name +
                      "' is not filesystem-safe ([A-Za-z0-9._-] only)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create registry dir '" + dir.string() + "': " + ec.message());

  RegistryIndex index = load_index(dir);
  const std::string rel_path = module.name + kModuleExt;
  if (index.find(module.name) != nullptr || fs::exists(dir / rel_path)) {
    throw ConflictError("module '" + module.name + "' already exists in '" + dir.string() + "'");
  }

  const std::vector<unsigned char> bytes = serialize_module(module);
  write_file_atomic(dir / rel_path, bytes.data(), bytes.size());
  const uint64_t checksum = fnv1a64(bytes.data(), bytes.size());

  index.entries.push_back(entry_for(module, rel_path, checksum));
  std::sort(index.entries.begin(), index.entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) { return a.name < b.name; });
  store_index(index, dir);

  return ModuleRecord{module, dir / rel_path, checksum};
}

LoraModule load_module(const std::string& name, const fs::path& dir) {
  const RegistryIndex index = load_index(dir);
  const IndexEntry* entry = index.find(name);
  if (entry == nullptr) {
    throw NotFoundError("module '" + name + "' not found in '" + dir.string() + "'");
  }
  const fs::path file = dir / entry->path;
  if (!fs::exists(file)) {
    throw CorruptionError("module '" + name + "': indexed file '" + file.string() +
                          "' is missing");
  }
  const std::vector<unsigned char> bytes = read_file(file);
  const uint64_t checksum = fnv1a64(bytes.data(), bytes.size());
  if (checksum != entry->checksum) {
    throw CorruptionError("module '" + name + "': checksum mismatch (" + to_hex(checksum) +
                          " vs indexed " + to_hex(entry->checksum) + ")");
  }
  LoraModule module = parse_module(bytes);
  if (module.name != name) {
    throw FormatError("module file '" + file.string() + "' holds '" + module.name +
                      "', expected '" + name + "'");
  }
  return module;
}

RegistryIndex rebuild_index(const fs::path& dir) {
  RegistryIndex index;
  if (!fs::exists(dir)) return index;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != kModuleExt) continue;
    const std::vector<unsigned char> bytes = read_file(entry.path());
    const LoraModule module = parse_module(bytes);
    index.entries.push_back(entry_for(module, entry.path().filename().string(),
                                      fnv1a64(bytes.data(), bytes.size())));
  }
  std::sort(index.entries.begin(), index.entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) { return a.name < b.name; });
  return index;
}

void write_index(const RegistryIndex& index, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create registry dir '" + dir.string() + "': " + ec.message());
  store_index(index, dir);
}

std::vector<std::string> prefilter(const RegistryIndex& index, int count, uint64_t seed) {
  if (count < 1) throw ArityError("prefilter: count must be >= 1, got " + std::to_string(count));
  if (index.entries.empty()) throw EmptyRegistryError("prefilter: registry index is empty");

  std::vector<std::string> names;
  names.reserve(index.entries.size());
  for (const IndexEntry& e : index.entries) names.push_back(e.name);
  std::sort(names.begin(), names.end());

  const int n = static_cast<int>(names.size());
  const int take = std::min(count, n);
  Rng rng(seed_mix(seed, 0x70));
  for (int i = 0; i < take; ++i) {
    const int j = i + rng.next_below(n - i);
    std::swap(names[static_cast<size_t>(i)], names[static_cast<size_t>(j)]);
  }
  names.resize(static_cast<size_t>(take));
  return names;
}

void save_base_model(const BaseModel& model, const fs::path& file) {
  check_model_invariants(model);
  json layers = json::array();
  uint64_t offset = 0;
  for (size_t l = 0; l < model.layer_specs.size(); ++l) {
    const LayerSpec& s = model.layer_specs[l];
    const uint64_t w_bytes = static_cast<uint64_t>(model.weights[l].data().size()) * 8;
    const uint64_t b_bytes = static_cast<uint64_t>(model.biases[l].size()) * 8;
    layers.push_back({{"name", s.name},
                      {"in_dim", s.in_dim},
                      {"out_dim", s.out_dim},
                      {"activation", s.activation == Activation::relu ? "relu" : "none"},
                      {"w_offset", offset},
                      {"b_offset", offset + w_bytes}});
    offset += w_bytes + b_bytes;
  }
  const json header = {{"format_version", kFormatVersion},
                       {"kind", "base_model"},
                       {"frozen", model.frozen},
                       {"layers", layers}};
  const std::string header_text = header.dump();

  std::vector<unsigned char> bytes;
  bytes.reserve(8 + header_text.size() + offset);
  put_u64_le(bytes, header_text.size());
  bytes.insert(bytes.end(), header_text.begin(), header_text.end());
  for (size_t l = 0; l < model.layer_specs.size(); ++l) {
    for (double v : model.weights[l].data()) put_f64_le(bytes, v);
    for (double v : model.biases[l]) put_f64_le(bytes, v);
  }
  write_file_atomic(file, bytes.data(), bytes.size());
}

BaseModel load_base_model(const fs::path& file) {
  if (!fs::exists(file)) throw NotFoundError("base model file '" + file.string() + "' not found");
  const std::vector<unsigned char> bytes = read_file(file);
  if (bytes.size() < 8) throw CorruptionError("base model file truncated: no header length");
  const uint64_t header_len = get_u64_le(bytes.data());
  if (bytes.size() < 8 + header_len) throw CorruptionError("base model file truncated: header");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("base model header is not valid JSON: ") + e.what());
  }

  BaseModel model;
  try {
    if (header.at("format_version").get<int>() != kFormatVersion ||
        header.at("kind").get<std::string>() != "base_model") {
      throw FormatError("unsupported base model container");
    }
    model.frozen = header.at("frozen").get<bool>();
    const unsigned char* payload = bytes.data() + 8 + header_len;
    const uint64_t payload_len = bytes.size() - 8 - header_len;
    for (const json& jl : header.at("layers")) {
      LayerSpec s;
      s.name = jl.at("name").get<std::string>();
      s.in_dim = jl.at("in_dim").get<int>();
      s.out_dim = jl.at("out_dim").get<int>();
      const std::string act = jl.at("activation").get<std::string>();
      if (act == "relu") {
        s.activation = Activation::relu;
      } else if (act == "none") {
        s.activation = Activation::none;
      } else {
        throw FormatError("unknown activation '" + act + "'");
      }
      const uint64_t w_off = jl.at("w_offset").get<uint64_t>();
      const uint64_t b_off = jl.at("b_offset").get<uint64_t>();
      const uint64_t w_count = static_cast<uint64_t>(s.in_dim) * static_cast<uint64_t>(s.out_dim);
      const uint64_t b_count = static_cast<uint64_t>(s.out_dim);
      if (b_off != w_off + w_count * 8 || w_off + (w_count + b_count) * 8 > payload_len) {
        throw CorruptionError("base model file truncated: layer '" + s.name + "' payload");
      }
      Matrix w(s.in_dim, s.out_dim);
      std::vector<double> b(static_cast<size_t>(s.out_dim));
      for (size_t i = 0; i < w_count; ++i) w.data()[i] = get_f64_le(payload + w_off + i * 8);
      for (size_t i = 0; i < b_count; ++i) b[i] = get_f64_le(payload + b_off + i * 8);
      model.layer_specs.push_back(std::move(s));
      model.weights.push_back(std::move(w));
      model.biases.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("base model header is missing fields: ") + e.what());
  }
  check_model_invariants(model);
  return model;
}

}  // namespace lorahub
