// mm2ct: multi-modal MR-to-CT translation at desk scale.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "mm2ct/experiment.hpp"
#include "mm2ct/gradcheck.hpp"
#include "mm2ct/mamba.hpp"
#include "mm2ct/objectives.hpp"

using namespace mm2ct;

namespace {

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = path.empty() ? RunConfig::defaults() : RunConfig::from_file(path);
    for (const auto& kv : overrides) {
        const size_t eq = kv.find('=');
        check(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const std::string& spec, const std::vector<std::string>& overrides,
                 const std::string& out, int subjects) {
    RunConfig cfg = load_config(spec, overrides);
    PhantomSpec ps = PhantomSpec::from_config(cfg);
    phantom_generate(ps, subjects, out, cfg.fingerprint());
    std::printf("wrote %d subjects to %s (fingerprint %s)\n", subjects, out.c_str(),
                fingerprint_hex(cfg.fingerprint()).c_str());
    return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides,
              const std::string& data_dir, const std::string& out, bool quiet) {
    RunConfig cfg = load_config(config, overrides);
    Dataset data = Dataset::load(data_dir);
    MM2CTModel model = MM2CTModel::build(cfg);
    TrainResult result = train_model(model, data, !quiet);
    save_model(out, model, data.fingerprint);
    write_text_file(out + ".log.csv", train_log_csv(result.log));
    std::printf("saved %s (config %s, data %s); log: %s.log.csv\n", out.c_str(),
                fingerprint_hex(cfg.fingerprint()).c_str(),
                fingerprint_hex(data.fingerprint).c_str(), out.c_str());
    return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& t1_path, const std::string& t2_path,
                  const std::string& out, uint64_t seed, bool pgm) {
    LoadedModel lm = load_model(ckpt);
    Tensor t1 = read_tensor(t1_path);
    Tensor t2 = read_tensor(t2_path);
    Tensor ct_hat = lm.model.translate(to_model_range(t1), to_model_range(t2), seed);
    Tensor out01 = from_model_range(ct_hat);
    write_tensor(out, out01);
    if (pgm) export_pgm(out01, out + ".pgm");
    // record provenance next to the prediction for the eval gate
    const size_t slash = out.find_last_of('/');
    const std::string dir = slash == std::string::npos ? "." : out.substr(0, slash);
    std::ostringstream manifest;
    manifest << "fingerprint = " << fingerprint_hex(lm.config_fingerprint) << "\n"
             << "data_fingerprint = " << fingerprint_hex(lm.data_fingerprint) << "\n";
    write_text_file(dir + "/manifest.txt", manifest.str());
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& csv, bool force) {
    enforce_eval_gate(pred, gt, force);
    EvalReport r = eval_report(pred, gt);
    std::cout << format_report_table(r);
    if (!csv.empty()) write_report_csv(r, csv);
    return 0;
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& overrides,
               const std::string& data_dir, const std::string& seeds_csv, bool quiet) {
    RunConfig cfg = load_config(config, overrides);
    Dataset data = Dataset::load(data_dir);
    std::vector<uint64_t> seeds;
    std::stringstream ss(seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    check(!seeds.empty(), "ablate: no seeds given");
    auto rows = run_ablation(cfg, data, seeds, !quiet);
    std::cout << format_ablation_table(rows);
    return 0;
}

int cmd_gradcheck() {
    auto results = gradient_suite();
    bool all_ok = true;
    for (const auto& [name, err] : results) {
        const bool ok = err <= 1e-3f;
        all_ok &= ok;
        std::printf("%-22s rel_err %.3e  %s\n", name.c_str(), double(err), ok ? "ok" : "FAIL");
    }
    std::printf("gradcheck: %s\n", all_ok ? "all blocks pass" : "FAILURES above");
    return all_ok ? 0 : 1;
}

int cmd_bench_scan(const std::string& csv) {
    auto rows = bench_scan(1234);
    std::ostringstream os;
    os << "L,C,N,variant,nanoseconds,max_abs_dev_vs_seq\n";
    for (const auto& r : rows)
        os << r.L << "," << r.C << "," << r.N << "," << r.variant << "," << r.nanoseconds << ","
           << r.max_abs_dev_vs_seq << "\n";
    if (csv.empty())
        std::cout << os.str();
    else
        write_text_file(csv, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal MR-to-CT translation (selective-state-space fusion + "
                 "cycle-consistent conditional diffusion) on synthetic phantoms"};
    app.require_subcommand(1);

    std::string spec, out_dir, config, data_dir, ckpt, t1, t2, out, pred, gt, csv, seeds;
    std::vector<std::string> overrides;
    int subjects = 15;
    uint64_t seed = 0;
    bool force = false, quiet = false, pgm = false;

    auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
    gen->add_option("--spec", spec, "config file with data.* keys");
    gen->add_option("--set", overrides, "override config key=value")->take_all();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--subjects", subjects, "number of subjects (default 15)");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config, "config file");
    train->add_option("--set", overrides, "override config key=value")->take_all();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", ckpt, "checkpoint output path")->required();
    train->add_flag("--quiet", quiet, "suppress progress lines");

    auto* tr = app.add_subcommand("translate", "translate one T1/T2 pair to CT");
    tr->add_option("--ckpt", ckpt, "checkpoint")->required();
    tr->add_option("--t1", t1, "T1 tensor file")->required();
    tr->add_option("--t2", t2, "T2 tensor file")->required();
    tr->add_option("--out", out, "output tensor file")->required();
    tr->add_option("--seed", seed, "sampling seed (default 0)");
    tr->add_flag("--pgm", pgm, "also write a PGM preview");

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM report over matching directories");
    ev->add_option("--pred", pred, "predictions directory")->required();
    ev->add_option("--gt", gt, "ground-truth directory")->required();
    ev->add_option("--csv", csv, "also write CSV here");
    ev->add_flag("--force", force, "ignore fingerprint mismatches");

    auto* ab = app.add_subcommand("ablate", "train/evaluate the fusion ablation grid");
    ab->add_option("--config", config, "config file");
    ab->add_option("--set", overrides, "override config key=value")->take_all();
    ab->add_option("--data", data_dir, "dataset directory")->required();
    ab->add_option("--seeds", seeds, "comma-separated seeds")->default_val("1,2,3");
    ab->add_flag("--quiet", quiet, "suppress progress lines");

    app.add_subcommand("gradcheck", "finite-difference checks over all blocks");

    auto* bs = app.add_subcommand("bench-scan", "selective-scan benchmark");
    bs->add_option("--csv", csv, "write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(spec, overrides, out_dir, subjects);
        if (train->parsed()) return cmd_train(config, overrides, data_dir, ckpt, quiet);
        if (tr->parsed()) return cmd_translate(ckpt, t1, t2, out, seed, pgm);
        if (ev->parsed()) return cmd_eval(pred, gt, csv, force);
        if (ab->parsed()) return cmd_ablate(config, overrides, data_dir, seeds, quiet);
        if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
        if (bs->parsed()) return cmd_bench_scan(csv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
