#pragma once

#include <map>
#include <string>
#include <vector>

#include "mm2ct/tensor.hpp"

namespace mm2ct {

// Tensor file: magic "MM2T", rank u8, extents u32 (LE) each, then the raw
// little-endian f32 payload. Round-trips bit-exactly.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// Binary P5, maxval 255; values clamped to [0,1] and quantized round-half-up.
void export_pgm(const Tensor& img, const std::string& path);

// Checkpoint: magic "MM2T", version u32, count u32, then per-parameter
// records (name_len u16, UTF-8 name, rank u8, extents u32 each, raw LE f32
// payload), sorted by name. Metadata rides along as reserved "__meta.*"
// records (packed bytes / bit-cast integers), so the container stays a flat
// list of named tensors.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;

    void put_meta_u64(const std::string& key, uint64_t value);
    bool get_meta_u64(const std::string& key, uint64_t& out) const;
    void put_meta_text(const std::string& key, const std::string& text);
    bool get_meta_text(const std::string& key, std::string& out) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::string> list_files(const std::string& dir, const std::string& suffix);
void ensure_dir(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mm2ct
