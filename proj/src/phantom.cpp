#include "mm2ct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mm2ct/io.hpp"
#include "mm2ct/rng.hpp"

namespace mm2ct {

namespace {

// Default tissue table. Classes 1/2 share t1, classes 3/4 share t2; all CT
// values are distinct so CT -> (T1,T2) stays well-posed for the reverse
// generators.
const std::array<float, 3> kDefaultIntensities[5] = {
    {0.05f, 0.05f, 0.02f},  // background
    {0.30f, 0.70f, 0.25f},
    {0.30f, 0.40f, 0.75f},
    {0.75f, 0.60f, 0.40f},
    {0.50f, 0.60f, 0.85f},
};

struct ShapeDef {
    bool ellipse;
    float cx, cy, ax, ay, rot;
    uint8_t cls;
};

}  // namespace

PhantomSpec PhantomSpec::from_config(const RunConfig& cfg) {
    PhantomSpec s;
    s.image_size = cfg.data_image_size;
    s.n_classes = cfg.data_classes;
    s.slices_per_subject = cfg.data_slices;
    s.noise_std = cfg.data_noise_std;
    s.bias_amp_t1 = cfg.data_bias_t1;
    s.bias_amp_t2 = cfg.data_bias_t2;
    s.bias_amp_ct = cfg.data_bias_ct;
    s.min_shapes = cfg.data_min_shapes;
    s.max_shapes = cfg.data_max_shapes;
    s.seed = cfg.seed;
    s.intensities.assign(kDefaultIntensities, kDefaultIntensities + 5);
    if (s.n_classes != 5) {
        // extend deterministically; extra classes get distinct values
        RngStream rng = derive_stream(0xC1A55ull, "phantom/classes");
        while (int(s.intensities.size()) < s.n_classes)
            s.intensities.push_back({rng.uniform(0.1f, 0.9f), rng.uniform(0.1f, 0.9f),
                                     rng.uniform(0.1f, 0.9f)});
        s.intensities.resize(size_t(s.n_classes));
    }
    s.check_ambiguity();
    return s;
}

void PhantomSpec::check_ambiguity() const {
    check(int(intensities.size()) == n_classes, "phantom: intensity table size mismatch");
    bool t1_pair = false, t2_pair = false;
    for (size_t i = 1; i < intensities.size(); ++i)
        for (size_t j = i + 1; j < intensities.size(); ++j) {
            if (intensities[i][0] == intensities[j][0] &&
                std::fabs(intensities[i][2] - intensities[j][2]) >= 0.2f)
                t1_pair = true;
            if (intensities[i][1] == intensities[j][1] &&
                std::fabs(intensities[i][2] - intensities[j][2]) >= 0.2f)
                t2_pair = true;
        }
    check(t1_pair && t2_pair,
          "phantom: intensity table lost its ambiguity (need equal-T1 and equal-T2 class pairs "
          "with CT gaps >= 0.2)");
}

PhantomSlice phantom_slice(const PhantomSpec& spec, int subject, int slice) {
    check(subject >= 0 && slice >= 0, "phantom: negative index");
    const int S = spec.image_size;
    RngStream rng = derive_stream(spec.seed, "phantom/slice",
                                  uint64_t(subject) * 1000003ull + uint64_t(slice));

    const int n_shapes = spec.min_shapes + rng.next_int(spec.max_shapes - spec.min_shapes + 1);
    std::vector<ShapeDef> shapes;
    for (int k = 0; k < n_shapes; ++k) {
        ShapeDef d;
        d.ellipse = rng.next_double() < 0.7;
        d.cx = rng.uniform(0.22f, 0.78f) * float(S);
        d.cy = rng.uniform(0.22f, 0.78f) * float(S);
        d.ax = rng.uniform(0.08f, 0.28f) * float(S);
        d.ay = rng.uniform(0.08f, 0.28f) * float(S);
        d.rot = rng.uniform(0.0f, 3.14159265f);
        // first K-1 shapes cover every foreground class, the rest are random
        d.cls = uint8_t(k < spec.n_classes - 1 ? 1 + k
                                               : 1 + rng.next_int(spec.n_classes - 1));
        shapes.push_back(d);
    }

    PhantomSlice out;
    out.labels.assign(size_t(S) * S, 0);
    for (const auto& d : shapes) {
        const float cr = std::cos(d.rot), sr = std::sin(d.rot);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float dx = float(x) - d.cx, dy = float(y) - d.cy;
                const float u = (cr * dx + sr * dy) / d.ax;
                const float v = (-sr * dx + cr * dy) / d.ay;
                const bool inside = d.ellipse ? (u * u + v * v <= 1.0f)
                                              : (std::fabs(u) <= 1.0f && std::fabs(v) <= 1.0f);
                if (inside) out.labels[size_t(y) * S + x] = d.cls;
            }
    }

    // smooth multiplicative bias field per modality: degree-2 polynomial in
    // normalized coordinates, peak-normalized to [-1,1]
    auto bias_field = [&](RngStream& brng) {
        std::array<float, 5> c;
        for (auto& v : c) v = brng.uniform(-1.0f, 1.0f);
        std::vector<float> field(size_t(S) * S, 0.0f);
        float peak = 1e-6f;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float X = 2.0f * float(x) / float(S - 1) - 1.0f;
                const float Y = 2.0f * float(y) / float(S - 1) - 1.0f;
                const float p = c[0] * X + c[1] * Y + c[2] * X * Y + c[3] * X * X + c[4] * Y * Y;
                field[size_t(y) * S + x] = p;
                peak = std::max(peak, std::fabs(p));
            }
        for (auto& v : field) v /= peak;
        return field;
    };

    auto render = [&](int channel, float amp) {
        auto field = bias_field(rng);
        Tensor img({1, S, S}, 0.0f);
        float* p = img.data();
        for (int64_t i = 0; i < int64_t(S) * S; ++i) {
            const float base = spec.intensities[out.labels[size_t(i)]][size_t(channel)];
            float v = base * (1.0f + amp * field[size_t(i)]) + spec.noise_std * rng.gaussian();
            p[i] = std::min(1.0f, std::max(0.0f, v));
        }
        return img;
    };

    out.t1 = render(0, spec.bias_amp_t1);
    out.t2 = render(1, spec.bias_amp_t2);
    out.ct = render(2, spec.bias_amp_ct);
    return out;
}

void phantom_generate(const PhantomSpec& spec, int n_subjects, const std::string& out_dir,
                      uint64_t config_fingerprint) {
    check(n_subjects >= 1, "phantom_generate: n_subjects must be >= 1");
    ensure_dir(out_dir);

    // (9,2,4)-proportioned split over the subject list
    const int n_val = std::max(1, n_subjects * 2 / 15);
    const int n_test = std::max(1, n_subjects * 4 / 15);
    const int n_train = n_subjects - n_val - n_test;
    check(n_train >= 1, "phantom_generate: too few subjects to split");

    std::ostringstream split;
    for (int s = 0; s < n_subjects; ++s) {
        char name[32];
        std::snprintf(name, sizeof(name), "sub%02d", s);
        const char* part = s < n_train ? "train" : (s < n_train + n_val ? "val" : "test");
        split << name << " " << part << "\n";
        for (const char* mod : {"t1", "t2", "ct"}) ensure_dir(out_dir + "/" + name + "/" + mod);
        for (int k = 0; k < spec.slices_per_subject; ++k) {
            PhantomSlice sl = phantom_slice(spec, s, k);
            char fname[32];
            std::snprintf(fname, sizeof(fname), "slice%02d.ten", k);
            char pname[32];
            std::snprintf(pname, sizeof(pname), "slice%02d.pgm", k);
            const Tensor* imgs[3] = {&sl.t1, &sl.t2, &sl.ct};
            const char* mods[3] = {"t1", "t2", "ct"};
            for (int m = 0; m < 3; ++m) {
                const std::string base = out_dir + "/" + name + "/" + mods[m] + "/";
                write_tensor(base + fname, *imgs[m]);
                export_pgm(*imgs[m], base + pname);
            }
        }
    }
    write_text_file(out_dir + "/split.txt", split.str());
    std::ostringstream manifest;
    manifest << "fingerprint = " << fingerprint_hex(config_fingerprint) << "\n"
             << "subjects = " << n_subjects << "\n"
             << "slices_per_subject = " << spec.slices_per_subject << "\n"
             << "image_size = " << spec.image_size << "\n";
    write_text_file(out_dir + "/manifest.txt", manifest.str());
}

SplitLists read_split(const std::string& data_dir) {
    SplitLists lists;
    std::istringstream is(read_text_file(data_dir + "/split.txt"));
    std::string subject, part;
    while (is >> subject >> part) {
        if (part == "train")
            lists.train.push_back(subject);
        else if (part == "val")
            lists.val.push_back(subject);
        else if (part == "test")
            lists.test.push_back(subject);
        else
            fail("split.txt: unknown partition '" + part + "'");
    }
    check(!lists.train.empty(), data_dir + ": empty train split");
    return lists;
}

}  // namespace mm2ct
