#include "mm2ct/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace mm2ct {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'M', '2', 'T'};

void put_u16(std::ofstream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u8(std::ofstream& f, uint8_t v) { f.write(reinterpret_cast<const char*>(&v), 1); }

uint16_t get_u16(std::ifstream& f) {
    uint16_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 2);
    return v;
}
uint32_t get_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint8_t get_u8(std::ifstream& f) {
    uint8_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 1);
    return v;
}

void write_record_body(std::ofstream& f, const Tensor& t) {
    put_u8(f, uint8_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(f, uint32_t(t.dim(i)));
    f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
}

Tensor read_record_body(std::ifstream& f, const std::string& path) {
    const int rank = get_u8(f);
    check(rank >= 1 && rank <= 8, path + ": implausible tensor rank");
    Shape s(size_t(rank), 0);
    for (int i = 0; i < rank; ++i) {
        const uint32_t e = get_u32(f);
        check(e >= 1 && e <= (1u << 28), path + ": extent overflow");
        s[size_t(i)] = int(e);
    }
    std::vector<float> data(size_t(shape_numel(s)), 0.0f);
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * 4));
    check(bool(f), path + ": truncated payload");
    return Tensor::from_vec(std::move(s), std::move(data));
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    check(t.defined(), "write_tensor: undefined tensor");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(bool(f), "write_tensor: cannot open " + path);
    f.write(kMagic, 4);
    write_record_body(f, t);
    check(bool(f), "write_tensor: write failed for " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(bool(f), "read_tensor: cannot open " + path);
    char magic[4] = {0, 0, 0, 0};
    f.read(magic, 4);
    check(std::memcmp(magic, kMagic, 4) == 0, path + ": bad magic");
    Tensor t = read_record_body(f, path);
    f.peek();
    check(f.eof(), path + ": trailing bytes after payload");
    return t;
}

void export_pgm(const Tensor& img, const std::string& path) {
    check(img.defined(), "export_pgm: undefined tensor");
    int H, W;
    if (img.rank() == 3 && img.dim(0) == 1) {
        H = img.dim(1);
        W = img.dim(2);
    } else if (img.rank() == 2) {
        H = img.dim(0);
        W = img.dim(1);
    } else {
        fail("export_pgm: expects [H,W] or [1,H,W]");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(bool(f), "export_pgm: cannot open " + path);
    f << "P5\n" << W << " " << H << "\n255\n";
    const float* p = img.data();
    std::vector<unsigned char> row(size_t(W), 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            float v = p[int64_t(y) * W + x];
            v = std::min(1.0f, std::max(0.0f, v));
            row[size_t(x)] = (unsigned char)(std::floor(v * 255.0f + 0.5f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), W);
    }
}

void Checkpoint::put_meta_u64(const std::string& key, uint64_t value) {
    std::vector<float> packed(2);
    std::memcpy(packed.data(), &value, 8);
    tensors["__meta." + key] = Tensor::from_vec({2}, std::move(packed));
}

bool Checkpoint::get_meta_u64(const std::string& key, uint64_t& out) const {
    auto it = tensors.find("__meta." + key);
    if (it == tensors.end() || it->second.numel() != 2) return false;
    std::memcpy(&out, it->second.data(), 8);
    return true;
}

void Checkpoint::put_meta_text(const std::string& key, const std::string& text) {
    put_meta_u64(key + ".len", uint64_t(text.size()));
    std::string padded = text;
    while (padded.size() % 4 != 0) padded.push_back('\n');
    const int n = std::max(1, int(padded.size() / 4));
    std::vector<float> packed(size_t(n), 0.0f);
    if (!padded.empty()) std::memcpy(packed.data(), padded.data(), padded.size());
    tensors["__meta." + key] = Tensor::from_vec({n}, std::move(packed));
}

bool Checkpoint::get_meta_text(const std::string& key, std::string& out) const {
    uint64_t len = 0;
    if (!get_meta_u64(key + ".len", len)) return false;
    auto it = tensors.find("__meta." + key);
    if (it == tensors.end()) return false;
    std::string padded(size_t(it->second.numel()) * 4, '\0');
    std::memcpy(padded.data(), it->second.data(), padded.size());
    check(len <= padded.size(), "checkpoint: corrupt text metadata for " + key);
    out = padded.substr(0, len);
    return true;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(bool(f), "save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    put_u32(f, 1u);  // version
    put_u32(f, uint32_t(ckpt.tensors.size()));
    // std::map iterates sorted by name, which fixes the serialization order
    for (const auto& [name, tensor] : ckpt.tensors) {
        check(name.size() <= 0xFFFF, "save_checkpoint: name too long");
        put_u16(f, uint16_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        write_record_body(f, tensor);
    }
    check(bool(f), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(bool(f), "load_checkpoint: cannot open " + path);
    char magic[4] = {0, 0, 0, 0};
    f.read(magic, 4);
    check(std::memcmp(magic, kMagic, 4) == 0, path + ": bad magic");
    const uint32_t version = get_u32(f);
    check(version == 1, path + ": unsupported checkpoint version");
    const uint32_t count = get_u32(f);
    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = get_u16(f);
        std::string name(size_t(len), '\0');
        f.read(name.data(), len);
        check(bool(f), path + ": truncated record name");
        ckpt.tensors[name] = read_record_body(f, path);
    }
    return ckpt;
}

std::vector<std::string> list_files(const std::string& dir, const std::string& suffix) {
    check(fs::is_directory(dir), dir + ": not a directory");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    check(bool(f), "cannot open " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    check(bool(f), "cannot open " + path);
    f << text;
}

}  // namespace mm2ct
