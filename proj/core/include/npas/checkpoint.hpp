#pragma once

#include <string>
#include <utility>
#include <vector>

#include "npas/model.hpp"
#include "npas/tensor.hpp"

namespace npas {

// Little-endian binary checkpoint: magic, version, trainable census, the
// mapping document the run used, then named flat 64-bit float arrays in
// trainable order. Round-trips bit-exactly.
struct Checkpoint {
  std::size_t census = 0;
  std::string mapping_text;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  const std::vector<double>& array(const std::string& name) const;
};

Checkpoint checkpoint_from_model(const Model& model,
                                 const std::string& mapping_text);
// Writes checkpoint values into the model's trainables; names and sizes
// must match exactly.
void restore_model(const Model& model, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Weight dump: per-layer flat arrays with a shape header. Produced by
// `materialize` (and after training) so downstream analysis can read
// generated weights without running generation.
struct DumpEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void save_weight_dump(const std::vector<DumpEntry>& entries,
                      const std::string& path);
std::vector<DumpEntry> load_weight_dump(const std::string& path);

// Bytes the dump file will occupy; the payload is exactly 8 bytes per
// weight on top of the header/metadata.
std::size_t weight_dump_file_size(const std::vector<DumpEntry>& entries);

}  // namespace npas
