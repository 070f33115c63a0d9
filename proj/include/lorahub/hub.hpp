// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lorahub/lora.hpp"
#include "lorahub/model.hpp"

namespace lorahub {

struct LayerShape {
  std::string name;
  int d = 0;  // A rows
  int k = 0;  // B cols
};

struct IndexEntry {
  std::string name;
  std::string task_id;
  int rank = 0;
  std::vector<LayerShape> layers;
  std::string path;  // relative to the registry dir
  uint64_t checksum = 0;
};

/// registry.json contents. Entries are kept sorted by name so a rebuild
/// from a directory scan reproduces the stored index byte for byte.
struct RegistryIndex {
  int format_version = 1;
  std::vector<IndexEntry> entries;

  const IndexEntry* find(const std::string& name) const;
};

struct ModuleRecord {
  LoraModule module;
  std::filesystem::path path;
  uint64_t checksum = 0;
};

/// Module container format, version 1: an 8-byte little-endian header
/// length, a JSON header (name, task_id, rank, metadata, layer table with
/// shapes and payload byte offsets), then raw little-endian f64 payloads,
/// per layer A then B. Floats round-trip bit-exactly.
std::vector<unsigned char> serialize_module(const LoraModule& module);
LoraModule parse_module(const std::vector<unsigned char>& bytes);

/// Writes the module under dir/<name>.lora and updates registry.json
/// atomically (write-temp-then-rename). Throws ConflictError if the name
/// is already registered.
ModuleRecord save_module(const LoraModule& module, const std::filesystem::path& dir);

/// Loads by name, verifying the stored checksum and the module invariants.
LoraModule load_module(const std::string& name, const std::filesystem::path& dir);

/// Missing registry.json yields an empty index.
RegistryIndex load_index(const std::filesystem::path& dir);

/// Re-derives the index from the .lora files present in dir.
RegistryIndex rebuild_index(const std::filesystem::path& dir);

/// Replaces registry.json atomically.
void write_index(const RegistryIndex& index, const std::filesystem::path& dir);

/// min(count, |index|) distinct names, uniform without replacement,
/// deterministic under seed. Throws EmptyRegistryError on an empty index.
std::vector<std::string> prefilter(const RegistryIndex& index, int count, uint64_t seed);

/// Base-model snapshots share the container format (JSON header + raw
/// little-endian f64 payload, per layer W then bias).
void save_base_model(const BaseModel& model, const std::filesystem::path& file);
BaseModel load_base_model(const std::filesystem::path& file);

}  // namespace lorahub
