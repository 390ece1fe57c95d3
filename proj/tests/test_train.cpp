#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mm2ct/experiment.hpp"

using namespace mm2ct;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig cfg = RunConfig::defaults();
    cfg.data_image_size = 16;
    cfg.data_slices = 1;
    cfg.fusion_width = 4;
    cfg.scan_d_state = 4;
    cfg.model_gen_width = 2;
    cfg.model_unet_width = 4;
    cfg.model_disc_width = 2;
    cfg.model_resblocks = 1;
    cfg.train_batch = 2;
    cfg.train_steps = 3;
    return cfg;
}

std::vector<TrainItem> make_batch(const MM2CTModel& model, int n, uint64_t seed) {
    PhantomSpec spec = PhantomSpec::from_config(model.cfg);
    std::vector<TrainItem> batch;
    for (int i = 0; i < n; ++i) {
        PhantomSlice mr = phantom_slice(spec, i, 0);
        PhantomSlice ct = phantom_slice(spec, i + n, 0);
        TrainItem item;
        item.t1 = to_model_range(mr.t1);
        item.t2 = to_model_range(mr.t2);
        item.ct = to_model_range(ct.ct);
        batch.push_back(item);
    }
    (void)seed;
    return batch;
}

}  // namespace

TEST_CASE("patchgan on 16x16 inputs keeps the conv arithmetic") {
    RunConfig cfg = tiny_config();
    MM2CTModel model = MM2CTModel::build(cfg);
    NoGradGuard ng;
    Tensor img = Tensor({1, 16, 16}, 0.1f);
    CHECK(patchgan_forward(model.disc_ct, img).shape() == Shape{1, 2, 2});
}

TEST_CASE("two identical train steps log identical losses") {
    RunConfig cfg = tiny_config();
    auto run_once = [&]() {
        MM2CTModel model = MM2CTModel::build(cfg);
        Adam og(model.generator_group(), cfg.train_lr, cfg.train_adam_beta1, cfg.train_adam_beta2);
        Adam od(model.discriminator_group(), cfg.train_lr, cfg.train_adam_beta1,
                cfg.train_adam_beta2);
        auto batch = make_batch(model, 2, 5);
        std::vector<TrainLogRow> rows;
        for (int s = 1; s <= 3; ++s) rows.push_back(train_step(model, og, od, batch, s));
        return rows;
    };
    auto a = run_once();
    auto b = run_once();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(std::memcmp(&a[i].loss_l1, &b[i].loss_l1, 4) == 0);
        CHECK(std::memcmp(&a[i].loss_dis, &b[i].loss_dis, 4) == 0);
        CHECK(std::memcmp(&a[i].loss_gan_g, &b[i].loss_gan_g, 4) == 0);
        CHECK(std::memcmp(&a[i].loss_cycle, &b[i].loss_cycle, 4) == 0);
    }
}

TEST_CASE("zero learning rate leaves every parameter bit-unchanged") {
    RunConfig cfg = tiny_config();
    cfg.train_lr = 0.0f;
    MM2CTModel model = MM2CTModel::build(cfg);
    std::vector<std::vector<float>> before;
    for (auto& p : model.all_parameters()) before.push_back(p.tensor.vec());
    Adam og(model.generator_group(), 0.0f, cfg.train_adam_beta1, cfg.train_adam_beta2);
    Adam od(model.discriminator_group(), 0.0f, cfg.train_adam_beta1, cfg.train_adam_beta2);
    auto batch = make_batch(model, 2, 5);
    train_step(model, og, od, batch, 1);
    auto params = model.all_parameters();
    for (size_t i = 0; i < params.size(); ++i)
        CHECK(std::memcmp(before[i].data(), params[i].tensor.data(),
                          before[i].size() * sizeof(float)) == 0);
}

TEST_CASE("train log csv carries the spec columns") {
    std::vector<TrainLogRow> rows(2);
    rows[0] = {1, 0.5f, 0.6f, 1.2f, 0.3f, 12.0};
    rows[1] = {2, 0.4f, 0.7f, 1.1f, 0.2f, 11.0};
    const std::string csv = train_log_csv(rows);
    CHECK(csv.rfind("step,loss_l1,loss_gan_g,loss_dis,loss_cycle,wallclock_ms\n", 0) == 0);
    CHECK(csv.find("\n1,0.5,") != std::string::npos);
}

TEST_CASE("losses stay finite on in-range batches at init") {
    RunConfig cfg = tiny_config();
    MM2CTModel model = MM2CTModel::build(cfg);
    Adam og(model.generator_group(), cfg.train_lr, cfg.train_adam_beta1, cfg.train_adam_beta2);
    Adam od(model.discriminator_group(), cfg.train_lr, cfg.train_adam_beta1, cfg.train_adam_beta2);
    auto batch = make_batch(model, 2, 9);
    TrainLogRow row = train_step(model, og, od, batch, 1);
    CHECK(std::isfinite(row.loss_l1));
    CHECK(std::isfinite(row.loss_gan_g));
    CHECK(std::isfinite(row.loss_dis));
    CHECK(std::isfinite(row.loss_cycle));
}

TEST_CASE("model translate applies the zero-modality mask at inference") {
    RunConfig cfg = tiny_config();
    cfg.train_zero_modality = "t2";
    MM2CTModel model = MM2CTModel::build(cfg);
    PhantomSpec spec = PhantomSpec::from_config(cfg);
    PhantomSlice s = phantom_slice(spec, 0, 0);
    Tensor t1 = to_model_range(s.t1);
    Tensor t2a = to_model_range(s.t2);
    Tensor t2b = scale(add_scalar(t2a, 0.3f), -1.0f);  // a very different t2
    Tensor outa = model.translate(t1, t2a, 5);
    Tensor outb = model.translate(t1, t2b, 5);
    CHECK(std::memcmp(outa.data(), outb.data(), size_t(outa.numel()) * sizeof(float)) == 0);
}
