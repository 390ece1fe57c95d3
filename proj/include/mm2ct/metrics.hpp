#pragma once

#include <string>
#include <vector>

#include "mm2ct/tensor.hpp"

namespace mm2ct {

// 10 log10(max_val^2 / MSE), double-accumulated; a zero-error pair reports
// the 99 dB cap.
double psnr(const Tensor& pred, const Tensor& gt, double max_val = 1.0);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1) over
// valid window positions. Inputs are single-channel images scaled to [0,1].
double ssim(const Tensor& pred, const Tensor& gt);

struct EvalRow {
    std::string filename;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::string config_fingerprint;  // hex, may be empty
    std::string dataset_id;
};

EvalReport eval_pairs(std::vector<EvalRow>&& rows);

// Walks *.ten files (sorted by name) in both directories, requires matching
// sets, and computes per-image and mean metrics.
EvalReport eval_report(const std::string& pred_dir, const std::string& gt_dir);

std::string format_report_table(const EvalReport& r);
void write_report_csv(const EvalReport& r, const std::string& path);

}  // namespace mm2ct
