#pragma once

// Binary checkpoints and dataset files. Byte layouts: docs/FORMATS.md.

#include <cstdint>
#include <map>
#include <string>

#include "glit/dataset.hpp"
#include "glit/model.hpp"
#include "glit/supernet.hpp"

namespace glit {

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kDatasetVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamList tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (magic, version, header) or CorruptionError (truncated or
// damaged tensor record, naming the tensor).
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// meta: kind=model, model=<ModelConfig>, genotype=<Genotype>.
Checkpoint model_checkpoint(const GlitModel& model);
GlitModel model_from_checkpoint(const Checkpoint& ckpt);
// meta: kind=supernet, model=<ModelConfig>, space=<SearchSpaceSpec>.
Checkpoint supernet_checkpoint(const Supernet& sn);
Supernet supernet_from_checkpoint(const Checkpoint& ckpt);

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& bytes);
// Throws MissingArtifactError when the file cannot be opened.
std::string read_file(const std::string& path);

}  // namespace glit
