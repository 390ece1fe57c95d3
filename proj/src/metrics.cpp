#include "mm2ct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mm2ct/io.hpp"

namespace mm2ct {

double psnr(const Tensor& pred, const Tensor& gt, double max_val) {
    check(pred.defined() && gt.defined() && pred.same_shape(gt), "psnr: shape mismatch");
    check(max_val > 0.0, "psnr: max_val must be positive");
    double mse = 0.0;
    const float* a = pred.data();
    const float* b = gt.data();
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(pred.numel());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(max_val * max_val / mse));
}

namespace {

struct ImageView {
    const float* p;
    int H, W;
};

ImageView as_image(const Tensor& t, const char* op) {
    if (t.rank() == 3 && t.dim(0) == 1) return {t.data(), t.dim(1), t.dim(2)};
    check(t.rank() == 2, std::string(op) + ": expects [H,W] or [1,H,W]");
    return {t.data(), t.dim(0), t.dim(1)};
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& gt) {
    check(pred.defined() && gt.defined() && pred.same_shape(gt), "ssim: shape mismatch");
    ImageView a = as_image(pred, "ssim");
    ImageView b = as_image(gt, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    check(a.H >= kWin && a.W >= kWin, "ssim: image smaller than the 11x11 window");

    double win[kWin][kWin];
    double wsum = 0.0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            const double dy = y - (kWin - 1) / 2.0;
            const double dx = x - (kWin - 1) / 2.0;
            win[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            wsum += win[y][x];
        }
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) win[y][x] /= wsum;

    double total = 0.0;
    int64_t count = 0;
    for (int oy = 0; oy + kWin <= a.H; ++oy)
        for (int ox = 0; ox + kWin <= a.W; ++ox) {
            double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
            for (int y = 0; y < kWin; ++y)
                for (int x = 0; x < kWin; ++x) {
                    const double w = win[y][x];
                    const double v1 = a.p[(oy + y) * a.W + (ox + x)];
                    const double v2 = b.p[(oy + y) * b.W + (ox + x)];
                    mu1 += w * v1;
                    mu2 += w * v2;
                    s11 += w * v1 * v1;
                    s22 += w * v2 * v2;
                    s12 += w * v1 * v2;
                }
            const double var1 = s11 - mu1 * mu1;
            const double var2 = s22 - mu2 * mu2;
            const double cov = s12 - mu1 * mu2;
            total += ((2.0 * mu1 * mu2 + kC1) * (2.0 * cov + kC2)) /
                     ((mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2));
            ++count;
        }
    return total / double(count);
}

EvalReport eval_pairs(std::vector<EvalRow>&& rows) {
    EvalReport r;
    r.rows = std::move(rows);
    check(!r.rows.empty(), "eval: no image pairs");
    double sp = 0.0, ss = 0.0;
    for (const auto& row : r.rows) {
        sp += row.psnr_db;
        ss += row.ssim_val;
    }
    r.mean_psnr = sp / double(r.rows.size());
    r.mean_ssim = ss / double(r.rows.size());
    return r;
}

EvalReport eval_report(const std::string& pred_dir, const std::string& gt_dir) {
    const auto pred_files = list_files(pred_dir, ".ten");
    const auto gt_files = list_files(gt_dir, ".ten");
    check(!pred_files.empty(), pred_dir + ": no .ten files");
    for (const auto& f : pred_files)
        check(std::find(gt_files.begin(), gt_files.end(), f) != gt_files.end(),
              "eval: missing ground-truth counterpart for " + f);
    for (const auto& f : gt_files)
        check(std::find(pred_files.begin(), pred_files.end(), f) != pred_files.end(),
              "eval: missing prediction counterpart for " + f);
    std::vector<EvalRow> rows;
    for (const auto& f : pred_files) {
        Tensor p = read_tensor(pred_dir + "/" + f);
        Tensor g = read_tensor(gt_dir + "/" + f);
        rows.push_back({f, psnr(p, g, 1.0), ssim(p, g)});
    }
    return eval_pairs(std::move(rows));
}

std::string format_report_table(const EvalReport& r) {
    std::ostringstream os;
    char buf[160];
    os << "filename                          PSNR(dB)  SSIM(%)\n";
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "%-32s  %8.2f  %7.2f\n", row.filename.c_str(), row.psnr_db,
                      row.ssim_val * 100.0);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-32s  %8.2f  %7.2f\n", "MEAN", r.mean_psnr,
                  r.mean_ssim * 100.0);
    os << buf;
    return os.str();
}

void write_report_csv(const EvalReport& r, const std::string& path) {
    std::ostringstream os;
    if (!r.config_fingerprint.empty() || !r.dataset_id.empty())
        os << "# config_fingerprint=" << r.config_fingerprint << " dataset=" << r.dataset_id
           << "\n";
    os << "filename,psnr_db,ssim\n";
    char buf[160];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.9f,%.9f\n", row.filename.c_str(), row.psnr_db,
                      row.ssim_val);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "MEAN,%.9f,%.9f\n", r.mean_psnr, r.mean_ssim);
    os << buf;
    write_text_file(path, os.str());
}

}  // namespace mm2ct
