#pragma once

#include "mm2ct/metrics.hpp"
#include "mm2ct/model.hpp"
#include "mm2ct/phantom.hpp"

namespace mm2ct {

Tensor to_model_range(const Tensor& x01);    // [0,1] -> [-1,1]
Tensor from_model_range(const Tensor& xm);   // [-1,1] -> [0,1]

struct Dataset {
    struct Slice {
        std::string subject;
        std::string name;  // "sub03_slice01.ten"
        Tensor t1, t2, ct;  // [1,H,W] in [0,1]
    };
    std::vector<Slice> train, val, test;
    uint64_t fingerprint = 0;

    static Dataset load(const std::string& dir);
    const std::vector<Slice>& split(const std::string& name) const;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
};

// Builds and trains a model per cfg on the train split; log row per step.
TrainResult train_model(MM2CTModel& model, const Dataset& data, bool verbose);

// Translates every slice of a split and scores it against the CT ground
// truth. Per-image sampling seeds derive from cfg.seed and the slice name.
EvalReport evaluate_split(const MM2CTModel& model, const Dataset& data, const std::string& split);

// Translates a split into out_dir as [0,1] .ten files plus a manifest
// carrying the model and data fingerprints.
void write_predictions(const MM2CTModel& model, const Dataset& data, const std::string& split,
                       const std::string& out_dir, uint64_t data_fingerprint);

struct AblateRow {
    bool mamba = false;
    bool de = false;
    uint64_t seed = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};
// Trains the Table-2-style grid {no-mamba/no-DE, mamba/no-DE, mamba/DE} and
// evaluates each on the test split.
std::vector<AblateRow> run_ablation(const RunConfig& base, const Dataset& data,
                                    const std::vector<uint64_t>& seeds, bool verbose);
std::string format_ablation_table(const std::vector<AblateRow>& rows);

uint64_t dataset_fingerprint_from_manifest(const std::string& dir);
uint64_t manifest_field(const std::string& dir, const std::string& field);
void enforce_eval_gate(const std::string& pred_dir, const std::string& gt_dir, bool force);

// Finite-difference checks over every differentiable block; (name, max rel
// error) per block.
std::vector<std::pair<std::string, float>> gradient_suite();

}  // namespace mm2ct
