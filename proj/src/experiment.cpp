#include "mm2ct/experiment.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "mm2ct/gradcheck.hpp"
#include "mm2ct/mamba.hpp"

namespace mm2ct {

Tensor to_model_range(const Tensor& x01) {
    Tensor out(x01.shape(), 0.0f);
    for (int64_t i = 0; i < x01.numel(); ++i) out.data()[i] = 2.0f * x01.data()[i] - 1.0f;
    return out;
}

Tensor from_model_range(const Tensor& xm) {
    Tensor out(xm.shape(), 0.0f);
    for (int64_t i = 0; i < xm.numel(); ++i) {
        float v = 0.5f * (xm.data()[i] + 1.0f);
        out.data()[i] = std::min(1.0f, std::max(0.0f, v));
    }
    return out;
}

uint64_t manifest_field(const std::string& dir, const std::string& field) {
    std::istringstream is(read_text_file(dir + "/manifest.txt"));
    std::string key, eq, value;
    while (is >> key >> eq >> value)
        if (key == field) return std::stoull(value, nullptr, 16);
    fail(dir + "/manifest.txt: missing field " + field);
}

// Predictions carry the data fingerprint their model was trained against;
// scoring them against a different dataset is refused unless forced.
void enforce_eval_gate(const std::string& pred_dir, const std::string& gt_dir, bool force) {
    uint64_t model_data_fp = 0, gt_fp = 0;
    try {
        model_data_fp = manifest_field(pred_dir, "data_fingerprint");
        gt_fp = manifest_field(gt_dir, "fingerprint");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "note: fingerprint gate skipped (%s)\n", e.what());
        return;
    }
    if (model_data_fp != gt_fp && !force)
        fail("eval: model was trained against dataset " + fingerprint_hex(model_data_fp) +
             " but ground truth is " + fingerprint_hex(gt_fp) + " (use --force to override)");
}

uint64_t dataset_fingerprint_from_manifest(const std::string& dir) {
    std::istringstream is(read_text_file(dir + "/manifest.txt"));
    std::string key, eq, value;
    while (is >> key >> eq >> value)
        if (key == "fingerprint") return std::stoull(value, nullptr, 16);
    fail(dir + "/manifest.txt: no fingerprint line");
}

Dataset Dataset::load(const std::string& dir) {
    Dataset ds;
    ds.fingerprint = dataset_fingerprint_from_manifest(dir);
    SplitLists split = read_split(dir);
    auto load_subjects = [&](const std::vector<std::string>& subjects,
                             std::vector<Slice>& out) {
        for (const auto& subject : subjects) {
            const auto files = list_files(dir + "/" + subject + "/ct", ".ten");
            check(!files.empty(), dir + "/" + subject + ": no slices");
            for (const auto& f : files) {
                Slice s;
                s.subject = subject;
                s.name = subject + "_" + f;
                s.t1 = read_tensor(dir + "/" + subject + "/t1/" + f);
                s.t2 = read_tensor(dir + "/" + subject + "/t2/" + f);
                s.ct = read_tensor(dir + "/" + subject + "/ct/" + f);
                out.push_back(std::move(s));
            }
        }
    };
    load_subjects(split.train, ds.train);
    load_subjects(split.val, ds.val);
    load_subjects(split.test, ds.test);
    return ds;
}

const std::vector<Dataset::Slice>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    fail("unknown split '" + name + "'");
}

namespace {

TrainItem make_item(const MM2CTModel& model, const Dataset::Slice& mr,
                    const Dataset::Slice& ct) {
    TrainItem item;
    item.t1 = to_model_range(mr.t1);
    item.t2 = to_model_range(mr.t2);
    if (model.cfg.train_zero_modality == "t1") item.t1 = Tensor(item.t1.shape(), 0.0f);
    if (model.cfg.train_zero_modality == "t2") item.t2 = Tensor(item.t2.shape(), 0.0f);
    item.ct = to_model_range(ct.ct);
    return item;
}

}  // namespace

TrainResult train_model(MM2CTModel& model, const Dataset& data, bool verbose) {
    check(!data.train.empty(), "train_model: empty training split");
    tune_allocator();
    TrainResult result;
    Adam opt_g(model.generator_group(), model.cfg.train_lr, model.cfg.train_adam_beta1,
               model.cfg.train_adam_beta2);
    Adam opt_d(model.discriminator_group(), model.cfg.train_lr, model.cfg.train_adam_beta1,
               model.cfg.train_adam_beta2);
    const int n = int(data.train.size());
    for (int step = 1; step <= model.cfg.train_steps; ++step) {
        std::vector<TrainItem> batch;
        RngStream brng = derive_stream(model.cfg.seed, "train/batch", uint64_t(step));
        for (int j = 0; j < model.cfg.train_batch; ++j) {
            const auto& mr = data.train[size_t(brng.next_int(n))];
            const auto& ct = data.train[size_t(brng.next_int(n))];
            batch.push_back(make_item(model, mr, ct));
        }
        result.log.push_back(train_step(model, opt_g, opt_d, batch, step));
        if (verbose && (step % 100 == 0 || step == 1)) {
            const auto& r = result.log.back();
            std::fprintf(stderr, "step %5d  l1 %.4f  gan_g %.4f  dis %.4f  cyc %.4f  %.0f ms\n",
                         r.step, double(r.loss_l1), double(r.loss_gan_g), double(r.loss_dis),
                         double(r.loss_cycle), r.wallclock_ms);
        }
    }
    return result;
}

namespace {

uint64_t eval_seed(const MM2CTModel& model, const std::string& name) {
    return mix64(model.cfg.seed ^ fnv1a64("eval/" + name));
}

}  // namespace

EvalReport evaluate_split(const MM2CTModel& model, const Dataset& data, const std::string& split) {
    tune_allocator();
    const auto& slices = data.split(split);
    check(!slices.empty(), "evaluate_split: empty split " + split);
    std::vector<EvalRow> rows;
    for (const auto& s : slices) {
        Tensor ct_hat = model.translate(to_model_range(s.t1), to_model_range(s.t2),
                                        eval_seed(model, s.name));
        Tensor pred01 = from_model_range(ct_hat);
        rows.push_back({s.name, psnr(pred01, s.ct, 1.0), ssim(pred01, s.ct)});
    }
    EvalReport r = eval_pairs(std::move(rows));
    r.config_fingerprint = fingerprint_hex(model.cfg.fingerprint());
    r.dataset_id = fingerprint_hex(data.fingerprint);
    return r;
}

void write_predictions(const MM2CTModel& model, const Dataset& data, const std::string& split,
                       const std::string& out_dir, uint64_t data_fingerprint) {
    ensure_dir(out_dir);
    for (const auto& s : data.split(split)) {
        Tensor ct_hat = model.translate(to_model_range(s.t1), to_model_range(s.t2),
                                        eval_seed(model, s.name));
        write_tensor(out_dir + "/" + s.name, from_model_range(ct_hat));
    }
    std::ostringstream manifest;
    manifest << "fingerprint = " << fingerprint_hex(model.cfg.fingerprint()) << "\n"
             << "data_fingerprint = " << fingerprint_hex(data_fingerprint) << "\n";
    write_text_file(out_dir + "/manifest.txt", manifest.str());
}

std::vector<AblateRow> run_ablation(const RunConfig& base, const Dataset& data,
                                    const std::vector<uint64_t>& seeds, bool verbose) {
    std::vector<AblateRow> rows;
    const bool grid[3][2] = {{false, false}, {true, false}, {true, true}};
    for (const auto& g : grid) {
        for (uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.fusion_enable_mamba = g[0];
            cfg.fusion_enable_de = g[1];
            cfg.seed = seed;
            MM2CTModel model = MM2CTModel::build(cfg);
            if (verbose)
                std::fprintf(stderr, "[ablate] mamba=%d de=%d seed=%llu: training %d steps\n",
                             int(g[0]), int(g[1]), (unsigned long long)seed, cfg.train_steps);
            train_model(model, data, verbose);
            EvalReport r = evaluate_split(model, data, "test");
            rows.push_back({g[0], g[1], seed, r.mean_psnr, r.mean_ssim});
        }
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblateRow>& rows) {
    // mean over seeds per configuration, shaped like the ablation table
    std::ostringstream os;
    os << "Mamba module | DE | PSNR  | SSIM\n";
    const bool grid[3][2] = {{false, false}, {true, false}, {true, true}};
    char buf[120];
    for (const auto& g : grid) {
        double sp = 0, ss = 0;
        int n = 0;
        for (const auto& r : rows)
            if (r.mamba == g[0] && r.de == g[1]) {
                sp += r.psnr;
                ss += r.ssim;
                ++n;
            }
        if (n == 0) continue;
        std::snprintf(buf, sizeof(buf), "%-12s | %-2s | %5.2f | %5.2f\n", g[0] ? "yes" : "-",
                      g[1] ? "yes" : "-", sp / n, 100.0 * ss / n);
        os << buf;
    }
    return os.str();
}

// Finite-difference sweep over every differentiable block on small random
// probes; the acceptance gate and the gradcheck subcommand both run it.
std::vector<std::pair<std::string, float>> gradient_suite() {
    std::vector<std::pair<std::string, float>> results;
    RngStream rng(20240601);

    auto run = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                   Tensor probe) {
        Tape::active().reset();
        results.push_back({name, grad_check(f, std::move(probe))});
    };

    {
        Tensor w = randn({3, 2, 3, 3}, rng, 0.3f);
        Tensor b = randn({3}, rng, 0.1f);
        run("conv2d", [&](const Tensor& t) { return sum_all(conv2d(t, w, b, 1, 1)); },
            randn({2, 4, 4}, rng, 0.5f));
    }
    {
        Tensor w = randn({5, 4}, rng, 0.3f);
        run("linear", [&](const Tensor& t) { return mean_all(linear(t, w, Tensor())); },
            randn({6, 4}, rng, 0.5f));
    }
    {
        Tensor g = rand_uniform({5}, rng, 0.5f, 1.5f);
        Tensor b = randn({5}, rng, 0.2f);
        run("layer_norm", [&](const Tensor& t) { return sum_all(mul(layer_norm(t, g, b), t)); },
            randn({6, 5}, rng, 0.8f));
    }
    run("activations", [](const Tensor& t) {
        return sum_all(mul(silu(t), add(sigmoid(t), add(tanh_t(t), softmax(t, 1)))));
    }, randn({4, 6}, rng, 0.6f));
    {
        // discretize + sequential scan, all parameters
        const int L = 6, C = 2, N = 4;
        Tensor x = randn({L, C}, rng, 0.5f);
        Tensor A = rand_uniform({C, N}, rng, -1.5f, -0.1f);
        Tensor B = randn({L, N}, rng, 0.4f);
        Tensor dl = rand_uniform({L, C}, rng, 0.05f, 0.7f);
        Tensor cs = randn({L, N}, rng, 0.4f);
        Tensor d = full({C}, 1.0f);
        run("selective_scan", [&](const Tensor& t) {
            auto co = discretize_zoh(A, B, t);
            Tensor y = selective_scan_seq(x, co.abar, co.bbar, cs, d);
            return sum_all(mul(y, y));
        }, dl.clone());
        run("ssm_scan_fused", [&](const Tensor& t) {
            Tensor y = ssm_scan(x, t, A, B, cs, d);
            return sum_all(mul(y, y));
        }, dl.clone());
    }
    {
        MambaBlockParams blk;
        RngStream br(7);
        blk.init(4, 4, true, br);
        run("mamba_block", [&](const Tensor& t) { return sum_all(mamba_forward(blk, t)); },
            randn({8, 4}, rng, 0.5f));
        Tensor xk = randn({8, 4}, rng, 0.5f);
        run("cross_modal_mamba", [&](const Tensor& t) {
            Tensor o = cross_modal_mamba(blk, t, xk);
            return sum_all(mul(o, o));
        }, randn({8, 4}, rng, 0.5f));
    }
    {
        RngStream fr(11);
        DynLocalConvParams dlc;
        dlc.init(2, 0.7f, fr);
        run("dynamic_local_conv", [&](const Tensor& t) {
            return sum_all(dynamic_local_conv(dlc, t));
        }, randn({2, 4, 4}, rng, 0.5f));
        DiffAttnParams daa;
        daa.init(2, fr);
        Tensor f2 = randn({2, 4, 4}, rng, 0.5f);
        Tensor fused = randn({2, 4, 4}, rng, 0.5f);
        run("diff_aware_attention", [&](const Tensor& t) {
            Tensor o = diff_aware_attention(daa, t, f2, fused);
            return sum_all(mul(o, o));
        }, randn({2, 4, 4}, rng, 0.5f));
        FusionConfig fc;
        fc.width = 4;
        fc.d_state = 4;
        FusionParams fusion;
        fusion.init(fc, fr);
        // visible weights so the probe exercises a non-degenerate gradient
        auto bump = [&fr](Tensor& t, float s) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] += s * fr.gaussian();
        };
        bump(fusion.stem1.w1, 0.3f);
        bump(fusion.stem1.w2, 0.2f);
        bump(fusion.stem2.w1, 0.3f);
        bump(fusion.stem2.w2, 0.2f);
        bump(fusion.w_final, 0.2f);
        for (MambaBlockParams* blk : {&fusion.pre1[0], &fusion.pre2[0], &fusion.branch1,
                                      &fusion.branch2, &fusion.cross12, &fusion.cross21,
                                      &fusion.post[0]}) {
            bump(blk->w_in_x, 0.2f);
            bump(blk->w_in_z, 0.2f);
            bump(blk->w_out, 0.2f);
        }
        Tensor t2 = randn({1, 8, 8}, rng, 0.4f);
        run("fuse", [&](const Tensor& t) {
            Tensor o = fuse(fusion, t, t2);
            return mean_all(mul(o, o));
        }, randn({1, 8, 8}, rng, 0.4f));
    }
    {
        RngStream gr(13);
        auto bump = [&gr](Tensor& t, float s) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] += s * gr.gaussian();
        };
        GeneratorParams gen;
        gen.init(2, 1, 1, gr);
        for (Tensor* w : {&gen.w_in, &gen.w_d1, &gen.w_d2, &gen.w_u1, &gen.w_u2, &gen.w_out})
            bump(*w, 0.15f);
        run("generator", [&](const Tensor& t) { return sum_all(generator_forward(gen, t)); },
            randn({1, 8, 8}, rng, 0.4f));
        DenoiserParams den;
        den.init(4, 2, 4, gr);
        for (Tensor* w : {&den.w_in, &den.w_d1, &den.w_d2, &den.w_m, &den.w_u1, &den.w_u1b,
                          &den.w_u0, &den.w_out})
            bump(*w, 0.15f);
        Tensor cond = randn({2, 8, 8}, rng, 0.4f);
        run("denoiser", [&](const Tensor& t) {
            return sum_all(denoiser_forward(den, t, 3, cond));
        }, randn({1, 8, 8}, rng, 0.4f));
        DiscriminatorParams disc;
        disc.init(2, 1, gr);
        for (Tensor* w : {&disc.w1, &disc.w2, &disc.w3, &disc.w_head})
            for (int64_t i = 0; i < w->numel(); ++i) w->data()[i] = 0.2f * gr.gaussian();
        run("discriminator", [&](const Tensor& t) {
            Tensor o = patchgan_forward(disc, t);
            return sum_all(mul(o, o));
        }, randn({1, 16, 16}, rng, 0.5f));
    }
    {
        // composite objective wrt a generator weight
        RngStream cr(17);
        GeneratorParams gen;
        gen.init(2, 1, 1, cr);
        DiscriminatorParams disc;
        disc.init(2, 1, cr);
        Tensor src = randn({1, 16, 16}, rng, 0.4f);
        Tensor target = randn({1, 16, 16}, rng, 0.4f);
        run("objective_composite", [&](const Tensor& t) {
            GeneratorParams g2 = gen;
            g2.w_in = reshape(t, {2, 1, 3, 3});
            Tensor fake = generator_forward(g2, src);
            LossParts parts;
            parts.l1 = loss_l1(fake, target);
            parts.gan_g = loss_gan(patchgan_forward(disc, fake), Tensor(), GanSide::generator,
                                   "bce");
            LossWeights w;
            return loss_total(parts, w);
        }, Tensor::from_vec({18}, std::vector<float>(gen.w_in.vec())));
    }

    return results;
}

}  // namespace mm2ct
