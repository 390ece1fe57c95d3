#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mm2ct/config.hpp"
#include "mm2ct/tensor.hpp"

namespace mm2ct {

// Synthetic co-registered (T1, T2, CT) triples over random ellipse/box
// tissue maps. The intensity table is ambiguous by construction: classes 1
// and 2 share the T1 value but differ in CT by 0.30, classes 3 and 4 share
// the T2 value but differ in CT by 0.45 - so neither modality alone
// determines CT, while the (T1, T2) pair does.
struct PhantomSpec {
    int image_size = 64;
    int n_classes = 5;
    int slices_per_subject = 4;
    float noise_std = 0.02f;
    float bias_amp_t1 = 0.15f;
    float bias_amp_t2 = 0.15f;
    float bias_amp_ct = 0.03f;
    int min_shapes = 4;
    int max_shapes = 7;
    uint64_t seed = 42;
    // per-class (t1, t2, ct) in [0,1]; row 0 is background
    std::vector<std::array<float, 3>> intensities;

    static PhantomSpec from_config(const RunConfig& cfg);
    // throws unless the equal-T1 / equal-T2 ambiguous pairs exist
    void check_ambiguity() const;
};

struct PhantomSlice {
    Tensor t1, t2, ct;             // [1,H,W] in [0,1]
    std::vector<uint8_t> labels;   // H*W tissue classes
};

// Deterministic in (spec.seed, subject, slice) only.
PhantomSlice phantom_slice(const PhantomSpec& spec, int subject, int slice);

// Writes data/<subject>/<modality>/<slice>.ten (+ .pgm previews), split.txt
// and manifest.txt carrying the dataset fingerprint.
void phantom_generate(const PhantomSpec& spec, int n_subjects, const std::string& out_dir,
                      uint64_t config_fingerprint);

struct SplitLists {
    std::vector<std::string> train, val, test;
};
SplitLists read_split(const std::string& data_dir);

}  // namespace mm2ct
