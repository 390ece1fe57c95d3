#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mm2ct {

// Flat key=value run configuration. Every tunable in the pipeline lives
// here; unknown keys are rejected, and the canonical serialized form feeds a
// stable fingerprint that artifacts carry.
struct RunConfig {
    uint64_t seed = 42;

    int data_image_size = 64;
    int data_classes = 5;
    int data_slices = 4;
    float data_noise_std = 0.02f;
    float data_bias_t1 = 0.15f;
    float data_bias_t2 = 0.15f;
    float data_bias_ct = 0.03f;
    int data_min_shapes = 4;
    int data_max_shapes = 7;

    int fusion_width = 16;
    int fusion_pre_blocks = 1;
    int fusion_post_blocks = 1;
    bool fusion_enable_mamba = true;
    bool fusion_enable_de = true;
    float fusion_theta_cdc = 0.7f;

    int scan_d_state = 8;
    bool scan_bidirectional = true;
    int scan_chunk = 0;  // 0: sequential reference order

    int diffusion_T = 8;
    float diffusion_beta_min = 0.05f;
    float diffusion_beta_max = 0.8f;

    int model_resblocks = 3;
    int model_gen_width = 8;
    int model_unet_width = 16;
    int model_disc_width = 8;
    int model_temb_channels = 4;

    float loss_lambda_l1 = 100.0f;
    float loss_lambda_gan = 1.0f;
    float loss_lambda_cycle = 100.0f;
    std::string loss_gan_mode = "bce";

    float train_lr = 2e-4f;
    float train_adam_beta1 = 0.5f;
    float train_adam_beta2 = 0.999f;
    int train_batch = 4;
    int train_steps = 2000;
    std::string train_zero_modality = "none";  // none | t1 | t2

    static RunConfig defaults() { return RunConfig{}; }
    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::string& path);

    // throws on unknown keys or malformed values
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> known_keys();

    // canonical sorted key=value lines
    std::string to_text() const;
    uint64_t fingerprint() const;

    void validate() const;
};

std::string fingerprint_hex(uint64_t fp);

}  // namespace mm2ct
