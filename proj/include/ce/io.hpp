#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ce/model.hpp"
#include "ce/toy_data.hpp"

namespace ce {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---- PNG ----
// Images are (3, H, W) in [-1, 1]; files are 8-bit RGB. The mapping
// byte = round((v+1)/2 * 255) loses at most half a quantization step.
void write_png(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

// ---- digests ----
std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// ---- plain files ----
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// ---- model config <-> json ----
json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const json& j);

// ---- checkpoints ----
// Binary container: magic + version + JSON header (meta, tensor table,
// payload digest) + raw float32 little-endian payload. Save/load of the same
// parameter store is bitwise lossless.
struct LoadedCheckpoint {
    json meta;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> tensor_groups;
};

void save_checkpoint(const std::string& path, const ParamStoreT<float>& params,
                     const json& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Meta for a diffusion-model checkpoint: kind, config, vocabulary.
json model_meta(const DiffusionModel& m, const std::string& kind);
// Rebuilds a model from a checkpoint (kind must be pretrained/customized).
DiffusionModel model_from_checkpoint(const LoadedCheckpoint& ck);
// Copies checkpoint tensors into an existing store; the name sets must match
// exactly and shapes must agree.
void fill_params(ParamStoreT<float>& params, const LoadedCheckpoint& ck);

// ---- corpus persistence ----
// A directory of PNGs plus index.csv (filename, caption, class, modifier,
// held_out).
void save_corpus(const std::string& dir, const std::vector<CaptionedImage>& items);
std::vector<CaptionedImage> load_corpus(const std::string& dir);

}  // namespace ce
