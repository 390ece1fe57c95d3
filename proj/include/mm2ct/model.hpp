#pragma once

#include "mm2ct/config.hpp"
#include "mm2ct/io.hpp"
#include "mm2ct/objectives.hpp"
#include "mm2ct/translate.hpp"

namespace mm2ct {

void tune_allocator();

// Everything trainable: the non-diffusive cycle generators, the fusion
// module, the conditional denoiser, and the two patch discriminators.
struct MM2CTModel {
    RunConfig cfg;
    DiffusionSchedule sched;
    FusionParams fusion;
    DenoiserParams denoiser;
    GeneratorParams gen_ct;  // proxy MR (max of T1/T2) -> CT
    GeneratorParams gen_mr;  // CT -> (pseudo T1, pseudo T2)
    DiscriminatorParams disc_ct;
    DiscriminatorParams disc_mr;

    static MM2CTModel build(const RunConfig& cfg);

    std::vector<Parameter> generator_group();
    std::vector<Parameter> discriminator_group();
    std::vector<Parameter> all_parameters();

    // Applies train.zero_modality, then runs conditional reverse sampling.
    // Inputs and output are in model range [-1,1].
    Tensor translate(const Tensor& t1, const Tensor& t2, uint64_t seed) const;
};

// One training item, already mapped to model range with zero_modality applied
// to the MR pair.
struct TrainItem {
    Tensor t1, t2;  // unpaired MR slice
    Tensor ct;      // unpaired CT slice
};

struct TrainLogRow {
    int step = 0;
    float loss_l1 = 0.0f;
    float loss_gan_g = 0.0f;
    float loss_dis = 0.0f;
    float loss_cycle = 0.0f;
    double wallclock_ms = 0.0;
};

// One alternating update: discriminators on real/detached fakes, then the
// generator side (generators + fusion + denoiser) on the composite
// objective. Aborts on non-finite losses.
TrainLogRow train_step(MM2CTModel& model, Adam& opt_g, Adam& opt_d,
                       const std::vector<TrainItem>& batch, int step);

// Checkpointing with the full config text, its fingerprint, and the data
// fingerprint the model was trained against.
void save_model(const std::string& path, MM2CTModel& model, uint64_t data_fingerprint);
struct LoadedModel {
    MM2CTModel model;
    uint64_t config_fingerprint = 0;
    uint64_t data_fingerprint = 0;
};
LoadedModel load_model(const std::string& path);

std::string train_log_csv(const std::vector<TrainLogRow>& rows);

}  // namespace mm2ct
