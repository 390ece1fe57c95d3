#include "mm2ct/model.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mm2ct {

// The training graph allocates and frees a few hundred MB per step; keep
// freed blocks in the heap instead of handing pages back to the kernel every
// iteration.
void tune_allocator() {
#if defined(__GLIBC__)
    static bool done = false;
    if (done) return;
    done = true;
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

namespace {

FusionConfig fusion_config(const RunConfig& cfg) {
    FusionConfig fc;
    fc.width = cfg.fusion_width;
    fc.n_pre_blocks = cfg.fusion_pre_blocks;
    fc.n_post_blocks = cfg.fusion_post_blocks;
    fc.d_state = cfg.scan_d_state;
    fc.bidirectional = cfg.scan_bidirectional;
    fc.theta_cdc = cfg.fusion_theta_cdc;
    fc.enable_mamba = cfg.fusion_enable_mamba;
    fc.enable_de = cfg.fusion_enable_de;
    return fc;
}

Tensor zero_like_const(const Tensor& t) { return Tensor(t.shape(), 0.0f); }

}  // namespace

MM2CTModel MM2CTModel::build(const RunConfig& cfg) {
    cfg.validate();
    MM2CTModel m;
    m.cfg = cfg;
    m.sched = DiffusionSchedule::linear(cfg.diffusion_T, double(cfg.diffusion_beta_min),
                                        double(cfg.diffusion_beta_max));
    RngStream rng = derive_stream(cfg.seed, "init");
    m.fusion.init(fusion_config(cfg), rng);
    m.denoiser.init(cfg.model_unet_width, cfg.fusion_width, cfg.model_temb_channels, rng);
    m.gen_ct.init(cfg.model_gen_width, cfg.model_resblocks, 1, rng);
    m.gen_mr.init(cfg.model_gen_width, cfg.model_resblocks, 2, rng);
    m.disc_ct.init(cfg.model_disc_width, 1, rng);
    m.disc_mr.init(cfg.model_disc_width, 2, rng);
    return m;
}

std::vector<Parameter> MM2CTModel::generator_group() {
    std::vector<Parameter> out;
    fusion.collect("fusion", out);
    denoiser.collect("denoiser", out);
    gen_ct.collect("gen_ct", out);
    gen_mr.collect("gen_mr", out);
    return out;
}

std::vector<Parameter> MM2CTModel::discriminator_group() {
    std::vector<Parameter> out;
    disc_ct.collect("disc_ct", out);
    disc_mr.collect("disc_mr", out);
    return out;
}

std::vector<Parameter> MM2CTModel::all_parameters() {
    std::vector<Parameter> out = generator_group();
    auto d = discriminator_group();
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

Tensor MM2CTModel::translate(const Tensor& t1, const Tensor& t2, uint64_t seed) const {
    Tensor a = cfg.train_zero_modality == "t1" ? zero_like_const(t1) : t1;
    Tensor b = cfg.train_zero_modality == "t2" ? zero_like_const(t2) : t2;
    return translate_sample(fusion, denoiser, sched, a, b, seed);
}

TrainLogRow train_step(MM2CTModel& model, Adam& opt_g, Adam& opt_d,
                       const std::vector<TrainItem>& batch, int step) {
    check(!batch.empty(), "train_step: empty batch");
    tune_allocator();
    const auto wall_start = std::chrono::steady_clock::now();
    Tape& tape = Tape::active();
    tape.reset();

    const float inv_b = 1.0f / float(batch.size());
    const LossWeights weights{model.cfg.loss_lambda_l1, model.cfg.loss_lambda_gan,
                              model.cfg.loss_lambda_cycle, model.cfg.loss_gan_mode};
    const bool drop_t1 = model.cfg.train_zero_modality == "t1";
    const bool drop_t2 = model.cfg.train_zero_modality == "t2";

    // ---- generator-side forward (one graph reused by both phases) ----
    struct ItemFwd {
        Tensor pseudo_ct;  // G_ct(proxy MR)
        Tensor fake_mr;    // G_mr(real CT), 2 channels
        Tensor x0_hat;     // denoiser estimate conditioned on fused pseudo MR
    };
    std::vector<ItemFwd> fwd;
    Tensor l1_part, cyc_part;
    for (size_t i = 0; i < batch.size(); ++i) {
        const TrainItem& item = batch[i];
        ItemFwd f;
        // MR -> CT -> MR round trip
        Tensor proxy = emax(item.t1, item.t2);
        f.pseudo_ct = generator_forward(model.gen_ct, proxy);
        Tensor rec = generator_forward(model.gen_mr, f.pseudo_ct);
        Tensor cyc = loss_cycle(item.t1, item.t2, slice_axis0(rec, 0, 1), slice_axis0(rec, 1, 2));

        f.fake_mr = generator_forward(model.gen_mr, item.ct);
        Tensor pt1 = slice_axis0(f.fake_mr, 0, 1);
        Tensor pt2 = slice_axis0(f.fake_mr, 1, 2);
        if (drop_t1) pt1 = zero_like_const(pt1);
        if (drop_t2) pt2 = zero_like_const(pt2);

        // CT -> MR -> CT round trip; anchors the CT generator's intensities
        // (without it G_ct can drift into the dark-saturated GAN optimum)
        Tensor ct_rec = generator_forward(model.gen_ct, emax(pt1, pt2));
        cyc = scale(add(cyc, loss_l1(ct_rec, item.ct)), 0.5f);
        cyc_part = cyc_part.defined() ? add(cyc_part, scale(cyc, inv_b)) : scale(cyc, inv_b);

        // Diffusive pseudo-pairs, alternating direction so the condition
        // distribution covers both sides: even steps denoise real CT under
        // estimated sources, odd steps denoise the estimated CT under the
        // real sources the model will see at test time.
        const bool mirror = ((uint64_t(step) * batch.size() + i) & 1u) != 0;
        Tensor cond, target;
        if (!mirror) {
            cond = fuse(model.fusion, pt1, pt2);
            target = item.ct;
        } else {
            cond = fuse(model.fusion, item.t1, item.t2);
            target = detach(f.pseudo_ct);
        }

        RngStream trng = derive_stream(model.cfg.seed, "train/t",
                                       uint64_t(step) * 977 + uint64_t(i));
        const int t = 1 + trng.next_int(model.sched.T);
        RngStream nrng = derive_stream(model.cfg.seed, "train/noise",
                                       uint64_t(step) * 977 + uint64_t(i));
        Tensor x_t;
        {
            NoGradGuard ng;
            x_t = q_sample(target, t, randn(target.shape(), nrng), model.sched);
        }
        f.x0_hat = denoiser_forward(model.denoiser, x_t, t, cond);
        Tensor l1 = loss_l1(f.x0_hat, target);
        l1_part = l1_part.defined() ? add(l1_part, scale(l1, inv_b)) : scale(l1, inv_b);
        fwd.push_back(std::move(f));
    }

    // ---- discriminator phase (fakes detached) ----
    opt_d.zero_grad();
    Tensor d_loss;
    for (size_t i = 0; i < batch.size(); ++i) {
        const TrainItem& item = batch[i];
        Tensor d_ct_real = patchgan_forward(model.disc_ct, item.ct);
        Tensor d_ct_f1 = patchgan_forward(model.disc_ct, detach(fwd[i].pseudo_ct));
        Tensor d_ct_f2 = patchgan_forward(model.disc_ct, detach(fwd[i].x0_hat));
        Tensor d_ct = scale(add(loss_gan(d_ct_f1, d_ct_real, GanSide::discriminator,
                                         model.cfg.loss_gan_mode),
                                loss_gan(d_ct_f2, d_ct_real, GanSide::discriminator,
                                         model.cfg.loss_gan_mode)),
                            0.5f);
        Tensor real_pair = concat(item.t1, item.t2, 0);
        Tensor d_mr = loss_gan(patchgan_forward(model.disc_mr, detach(fwd[i].fake_mr)),
                               patchgan_forward(model.disc_mr, real_pair),
                               GanSide::discriminator, model.cfg.loss_gan_mode);
        Tensor d_i = scale(add(d_ct, d_mr), inv_b);
        d_loss = d_loss.defined() ? add(d_loss, d_i) : d_i;
    }
    check(std::isfinite(d_loss.item()), "train_step: non-finite discriminator loss at step " +
                                            std::to_string(step));
    tape.backward(d_loss);
    opt_d.step();

    // ---- generator phase against the updated discriminators ----
    opt_g.zero_grad();
    Tensor gan_part;
    for (size_t i = 0; i < batch.size(); ++i) {
        Tensor g_ct = scale(add(loss_gan(patchgan_forward(model.disc_ct, fwd[i].pseudo_ct),
                                         Tensor(), GanSide::generator, model.cfg.loss_gan_mode),
                                loss_gan(patchgan_forward(model.disc_ct, fwd[i].x0_hat), Tensor(),
                                         GanSide::generator, model.cfg.loss_gan_mode)),
                            0.5f);
        Tensor g_mr = loss_gan(patchgan_forward(model.disc_mr, fwd[i].fake_mr), Tensor(),
                               GanSide::generator, model.cfg.loss_gan_mode);
        Tensor g_i = scale(add(g_ct, g_mr), inv_b);
        gan_part = gan_part.defined() ? add(gan_part, g_i) : g_i;
    }
    LossParts parts;
    parts.l1 = l1_part;
    parts.gan_g = gan_part;
    parts.cycle = cyc_part;
    Tensor g_loss = loss_total(parts, weights);
    check(std::isfinite(g_loss.item()),
          "train_step: non-finite generator loss at step " + std::to_string(step));
    tape.backward(g_loss);
    opt_g.step();
    tape.reset();

    const auto wall_end = std::chrono::steady_clock::now();
    TrainLogRow row;
    row.step = step;
    row.loss_l1 = l1_part.item();
    row.loss_gan_g = gan_part.item();
    row.loss_dis = d_loss.item();
    row.loss_cycle = cyc_part.item();
    row.wallclock_ms =
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(wall_end - wall_start)
            .count();
    return row;
}

void save_model(const std::string& path, MM2CTModel& model, uint64_t data_fingerprint) {
    Checkpoint ckpt;
    for (auto& p : model.all_parameters()) {
        check(ckpt.tensors.find(p.name) == ckpt.tensors.end(),
              "save_model: duplicate parameter name " + p.name);
        ckpt.tensors[p.name] = p.tensor;
    }
    ckpt.put_meta_text("config", model.cfg.to_text());
    ckpt.put_meta_u64("fingerprint", model.cfg.fingerprint());
    ckpt.put_meta_u64("data_fingerprint", data_fingerprint);
    save_checkpoint(path, ckpt);
}

LoadedModel load_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    std::string config_text;
    check(ckpt.get_meta_text("config", config_text), path + ": checkpoint has no config record");
    LoadedModel out;
    out.model = MM2CTModel::build(RunConfig::from_text(config_text));
    ckpt.get_meta_u64("fingerprint", out.config_fingerprint);
    ckpt.get_meta_u64("data_fingerprint", out.data_fingerprint);
    check(out.config_fingerprint == out.model.cfg.fingerprint(),
          path + ": config fingerprint does not match its config text");
    for (auto& p : out.model.all_parameters()) {
        auto it = ckpt.tensors.find(p.name);
        check(it != ckpt.tensors.end(), path + ": missing parameter " + p.name);
        check(it->second.same_shape(p.tensor), path + ": shape mismatch for " + p.name);
        p.tensor.vec() = it->second.vec();
    }
    return out;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
    std::ostringstream os;
    os << "step,loss_l1,loss_gan_g,loss_dis,loss_cycle,wallclock_ms\n";
    char buf[200];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.step, double(r.loss_l1),
                      double(r.loss_gan_g), double(r.loss_dis), double(r.loss_cycle),
                      r.wallclock_ms);
        os << buf;
    }
    return os.str();
}

}  // namespace mm2ct
