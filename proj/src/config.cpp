#include "mm2ct/config.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "mm2ct/io.hpp"
#include "mm2ct/rng.hpp"
#include "mm2ct/tensor.hpp"

namespace mm2ct {

namespace {

std::string fmt_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", double(v));
    return buf;
}

float parse_float(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const float r = std::stof(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        fail("config: bad float for " + key + ": '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        fail("config: bad integer for " + key + ": '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        check(pos == v.size(), "");
        return r;
    } catch (...) {
        fail("config: bad unsigned for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("config: bad bool for " + key + ": '" + v + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> reg = [] {
        std::map<std::string, Field> m;
        auto add_int = [&](const std::string& key, int RunConfig::* f) {
            m[key] = {[f](const RunConfig& c) { return std::to_string(c.*f); },
                      [f](RunConfig& c, const std::string& k, const std::string& v) {
                          c.*f = parse_int(k, v);
                      }};
        };
        auto add_float = [&](const std::string& key, float RunConfig::* f) {
            m[key] = {[f](const RunConfig& c) { return fmt_float(c.*f); },
                      [f](RunConfig& c, const std::string& k, const std::string& v) {
                          c.*f = parse_float(k, v);
                      }};
        };
        auto add_bool = [&](const std::string& key, bool RunConfig::* f) {
            m[key] = {[f](const RunConfig& c) { return c.*f ? "true" : "false"; },
                      [f](RunConfig& c, const std::string& k, const std::string& v) {
                          c.*f = parse_bool(k, v);
                      }};
        };
        auto add_str = [&](const std::string& key, std::string RunConfig::* f) {
            m[key] = {[f](const RunConfig& c) { return c.*f; },
                      [f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; }};
        };
        m["run.seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                         [](RunConfig& c, const std::string& k, const std::string& v) {
                             c.seed = parse_u64(k, v);
                         }};
        add_int("data.image_size", &RunConfig::data_image_size);
        add_int("data.classes", &RunConfig::data_classes);
        add_int("data.slices_per_subject", &RunConfig::data_slices);
        add_float("data.noise_std", &RunConfig::data_noise_std);
        add_float("data.bias_amp_t1", &RunConfig::data_bias_t1);
        add_float("data.bias_amp_t2", &RunConfig::data_bias_t2);
        add_float("data.bias_amp_ct", &RunConfig::data_bias_ct);
        add_int("data.min_shapes", &RunConfig::data_min_shapes);
        add_int("data.max_shapes", &RunConfig::data_max_shapes);
        add_int("fusion.width", &RunConfig::fusion_width);
        add_int("fusion.pre_blocks", &RunConfig::fusion_pre_blocks);
        add_int("fusion.post_blocks", &RunConfig::fusion_post_blocks);
        add_bool("fusion.enable_mamba", &RunConfig::fusion_enable_mamba);
        add_bool("fusion.enable_de", &RunConfig::fusion_enable_de);
        add_float("fusion.theta_cdc", &RunConfig::fusion_theta_cdc);
        add_int("scan.d_state", &RunConfig::scan_d_state);
        add_bool("scan.bidirectional", &RunConfig::scan_bidirectional);
        add_int("scan.chunk", &RunConfig::scan_chunk);
        add_int("diffusion.T", &RunConfig::diffusion_T);
        add_float("diffusion.beta_min", &RunConfig::diffusion_beta_min);
        add_float("diffusion.beta_max", &RunConfig::diffusion_beta_max);
        add_int("model.resblocks", &RunConfig::model_resblocks);
        add_int("model.gen_width", &RunConfig::model_gen_width);
        add_int("model.unet_width", &RunConfig::model_unet_width);
        add_int("model.disc_width", &RunConfig::model_disc_width);
        add_int("model.temb_channels", &RunConfig::model_temb_channels);
        add_float("loss.lambda_l1", &RunConfig::loss_lambda_l1);
        add_float("loss.lambda_gan", &RunConfig::loss_lambda_gan);
        add_float("loss.lambda_cycle", &RunConfig::loss_lambda_cycle);
        add_str("loss.gan_mode", &RunConfig::loss_gan_mode);
        add_float("train.lr", &RunConfig::train_lr);
        add_float("train.adam_beta1", &RunConfig::train_adam_beta1);
        add_float("train.adam_beta2", &RunConfig::train_adam_beta2);
        add_int("train.batch", &RunConfig::train_batch);
        add_int("train.steps", &RunConfig::train_steps);
        add_str("train.zero_modality", &RunConfig::train_zero_modality);
        return m;
    }();
    return reg;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    check(it != registry().end(), "config: unknown key '" + key + "'");
    it->second.set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const {
    auto it = registry().find(key);
    check(it != registry().end(), "config: unknown key '" + key + "'");
    return it->second.get(*this);
}

std::vector<std::string> RunConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : registry()) keys.push_back(k);
    return keys;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        check(eq != std::string::npos,
              "config: line " + std::to_string(lineno) + " is not key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return from_text(read_text_file(path));
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, f] : registry()) os << k << " = " << f.get(*this) << "\n";
    return os.str();
}

uint64_t RunConfig::fingerprint() const { return fnv1a64(to_text()); }

void RunConfig::validate() const {
    check(data_image_size >= 16 && data_image_size % 8 == 0,
          "config: data.image_size must be a multiple of 8, >= 16");
    check(data_classes >= 3, "config: need at least 3 tissue classes");
    check(data_slices >= 1 && data_min_shapes >= data_classes - 1 &&
              data_max_shapes >= data_min_shapes,
          "config: bad phantom shape counts");
    check(fusion_width >= 2 && fusion_width % 2 == 0, "config: fusion.width must be even");
    check(fusion_theta_cdc >= 0.0f && fusion_theta_cdc <= 1.0f,
          "config: fusion.theta_cdc outside [0,1]");
    check(fusion_pre_blocks >= 0 && fusion_post_blocks >= 0, "config: negative block count");
    check(scan_d_state >= 1 && scan_chunk >= 0, "config: bad scan settings");
    check(diffusion_T >= 1 && diffusion_beta_min > 0.0f && diffusion_beta_max < 1.0f &&
              diffusion_beta_min <= diffusion_beta_max,
          "config: bad diffusion schedule");
    check(model_resblocks >= 0 && model_gen_width >= 1 && model_unet_width >= 1 &&
              model_disc_width >= 1 && model_temb_channels >= 1,
          "config: bad model widths");
    check(loss_lambda_l1 >= 0.0f && loss_lambda_gan >= 0.0f && loss_lambda_cycle >= 0.0f,
          "config: loss weights must be non-negative");
    check(loss_gan_mode == "bce" || loss_gan_mode == "lsgan", "config: unknown loss.gan_mode");
    check(train_batch >= 1 && train_steps >= 0 && train_lr >= 0.0f, "config: bad training setup");
    check(train_zero_modality == "none" || train_zero_modality == "t1" ||
              train_zero_modality == "t2",
          "config: train.zero_modality must be none|t1|t2");
}

std::string fingerprint_hex(uint64_t fp) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fp);
    return buf;
}

}  // namespace mm2ct
