// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spair/bench.hpp"
#include "spair/checkpoint.hpp"
#include "spair/config.hpp"
#include "spair/gradcheck_suite.hpp"
#include "spair/image_io.hpp"
#include "spair/metrics.hpp"
#include "spair/net.hpp"
#include "spair/synth.hpp"
#include "spair/train.hpp"

namespace fs = std::filesystem;
using namespace spair;

using F = float;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 1;
    std::string out = ".";
};

void add_global_opts(CLI::App* cmd, GlobalOpts& g) {
    cmd->add_option("--config", g.config_path, "config file (`key = value` lines, see --help-keys)");
    cmd->add_option("--seed", g.seed, "master seed; drives data, init, and training order");
    cmd->add_option("--out", g.out, "output directory (created if missing)");
}

// Parses the config file (if any) and fills spec/cfg. The master seed feeds
// network init and the training schedule through distinct streams; an
// explicit train.seed key overrides the derived one.
void load_run_config(const GlobalOpts& g, NetSpec& spec, TrainConfig& cfg) {
    cfg.seed = derive_seed(g.seed, 11);
    if (g.config_path.empty()) return;
    ConfigMap kv = load_config(g.config_path);
    apply_net_config(kv, spec);
    apply_train_config(kv, cfg);
    reject_unknown_keys(kv);
}

fs::path ensure_out_dir(const GlobalOpts& g) {
    fs::path dir(g.out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
    f.write(text.data(), std::streamsize(text.size()));
    if (!f) throw std::runtime_error(path.string() + ": write failed");
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<Sample<F>> load_dataset(const std::string& dir, int h, int w) {
    return dataset_from_manifest<F>(read_text(fs::path(dir) / "manifest.txt"), h, w);
}

std::string sample_stem(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", idx);
    return buf;
}

std::vector<Kind> parse_kinds(const std::string& csv) {
    std::vector<Kind> kinds;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        const std::string name = csv.substr(pos, comma - pos);
        if (!name.empty()) kinds.push_back(kind_from_name(name));
        pos = comma + 1;
    }
    require(!kinds.empty(), "expected at least one degradation kind");
    return kinds;
}

std::string train_log_text(const TrainResult<F>& res) {
    std::string text;
    for (const std::string& line : res.log) text += line + "\n";
    return text;
}

// Restores one image, using the localization net for guided variants and an
// all-clean mask for the plain baseline.
struct InferOut {
    Tensor4<F> restored;
    Mask<F> mask;
};

InferOut run_infer(const Net<F>& net_r, const Net<F>* net_l, const Tensor4<F>& image,
                   const TrainConfig& cfg) {
    InferOut out;
    if (variant_rank(net_r.variant) >= 2) {
        require(net_l != nullptr, "guided variants need a localization checkpoint (--netl)");
        const LocResult<F> loc = forward_localize(*net_l, image, cfg.mask_threshold);
        out.mask = loc.mask;
        out.restored = forward_restore(net_r, image, loc.mask, loc.feats, cfg.policy2);
    } else {
        out.mask = Mask<F>(image.n, image.h, image.w);
        out.restored = forward_restore(net_r, image, out.mask, {});
    }
    return out;
}

Net<F> build_variant(const NetSpec& spec, Variant v, uint64_t seed) {
    return v == Variant::net1 ? build_net1_matched<F>(spec, seed) : build_net_r<F>(spec, v, seed);
}

Net<F> load_net_l(const NetSpec& spec, const std::string& path) {
    Net<F> net_l = build_net_l<F>(spec, 0);
    load_into(net_l, path);
    return net_l;
}

// --- subcommand bodies ---

int cmd_synth(const GlobalOpts& g, int count, int height, int width, const std::string& kinds_csv) {
    const fs::path dir = ensure_out_dir(g);
    const auto dataset = make_dataset<F>(count, parse_kinds(kinds_csv), g.seed, height, width);
    for (size_t i = 0; i < dataset.size(); ++i) {
        const Sample<F>& s = dataset[i];
        const std::string stem = sample_stem(int(i));
        write_ppm((dir / (stem + "_clean.ppm")).string(), s.clean);
        write_ppm((dir / (stem + "_degraded.ppm")).string(), s.degraded);
        write_pgm((dir / (stem + "_mask.pgm")).string(), s.gt_mask);
    }
    write_text(dir / "manifest.txt", dataset_manifest(dataset));
    std::printf("wrote %zu samples + manifest.txt to %s\n", dataset.size(), dir.string().c_str());
    return 0;
}

int cmd_train_loc(const GlobalOpts& g, const std::string& data_dir, int height, int width) {
    NetSpec spec;
    TrainConfig cfg;
    load_run_config(g, spec, cfg);
    cfg.phase = Phase::localize;

    const auto data = load_dataset(data_dir, height, width);
    Net<F> net_l = build_net_l<F>(spec, derive_seed(g.seed, 10));
    const TrainResult<F> res = train(net_l, nullptr, data, {}, cfg);

    const fs::path dir = ensure_out_dir(g);
    save_checkpoint((dir / "net_l.sptn").string(), net_l.params);
    write_text(dir / "train_loc.log", train_log_text(res));
    std::printf("trained localization net for %d iters, final loss %.9g\n", cfg.iters,
                res.final_loss);
    std::printf("wrote %s and %s\n", (dir / "net_l.sptn").string().c_str(),
                (dir / "train_loc.log").string().c_str());
    return 0;
}

int cmd_train_restore(const GlobalOpts& g, const std::string& data_dir,
                      const std::string& val_dir, const std::string& netl_path, int height,
                      int width) {
    NetSpec spec;
    TrainConfig cfg;
    load_run_config(g, spec, cfg);
    cfg.phase = Phase::restore;

    const auto data = load_dataset(data_dir, height, width);
    std::vector<Sample<F>> val;
    if (!val_dir.empty()) val = load_dataset(val_dir, height, width);

    Net<F> net_l;
    const Net<F>* net_l_ptr = nullptr;
    if (variant_rank(cfg.variant) >= 2) {
        if (netl_path.empty())
            throw std::runtime_error("variant " + std::string(variant_name(cfg.variant)) +
                                     " needs a trained localization checkpoint (--netl)");
        net_l = load_net_l(spec, netl_path);
        net_l_ptr = &net_l;
    }

    Net<F> net = build_variant(spec, cfg.variant, derive_seed(g.seed, 10));
    const TrainResult<F> res = train(net, net_l_ptr, data, val, cfg);

    const fs::path dir = ensure_out_dir(g);
    save_checkpoint((dir / "net_r.sptn").string(), net.params);
    write_text(dir / "train_restore.log", train_log_text(res));
    std::printf("trained %s for %d iters, final loss %.9g\n", variant_name(cfg.variant), cfg.iters,
                res.final_loss);
    std::printf("wrote %s and %s\n", (dir / "net_r.sptn").string().c_str(),
                (dir / "train_restore.log").string().c_str());
    return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& image_path, const std::string& netr_path,
              const std::string& netl_path, const std::string& clean_path) {
    NetSpec spec;
    TrainConfig cfg;
    load_run_config(g, spec, cfg);

    const Tensor4<F> image = read_ppm<F>(image_path);
    Net<F> net = build_variant(spec, cfg.variant, 0);
    load_into(net, netr_path);
    Net<F> net_l;
    const Net<F>* net_l_ptr = nullptr;
    if (variant_rank(cfg.variant) >= 2) {
        if (netl_path.empty())
            throw std::runtime_error("variant " + std::string(variant_name(cfg.variant)) +
                                     " needs a trained localization checkpoint (--netl)");
        net_l = load_net_l(spec, netl_path);
        net_l_ptr = &net_l;
    }

    const InferOut r = run_infer(net, net_l_ptr, image, cfg);
    const fs::path dir = ensure_out_dir(g);
    write_ppm((dir / "restored.ppm").string(), r.restored);
    write_pgm((dir / "mask.pgm").string(), r.mask);

    uint64_t flagged = 0;
    for (int i = 0; i < r.mask.n; ++i) flagged += r.mask.count_ones(i);
    std::printf("restored %dx%d image; predicted mask flags %" PRIu64 "/%d pixels\n", image.w,
                image.h, flagged, image.h * image.w);
    if (!clean_path.empty()) {
        const Tensor4<F> clean = read_ppm<F>(clean_path);
        std::printf("psnr input vs clean:    %.4f dB\n", psnr(image, clean));
        std::printf("psnr restored vs clean: %.4f dB\n", psnr(r.restored, clean));
    }
    std::printf("wrote %s and %s\n", (dir / "restored.ppm").string().c_str(),
                (dir / "mask.pgm").string().c_str());
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& data_dir, const std::string& netr_path,
             const std::string& netl_path, int height, int width) {
    NetSpec spec;
    TrainConfig cfg;
    load_run_config(g, spec, cfg);

    const auto data = load_dataset(data_dir, height, width);
    Net<F> net = build_variant(spec, cfg.variant, 0);
    load_into(net, netr_path);
    Net<F> net_l;
    const Net<F>* net_l_ptr = nullptr;
    if (variant_rank(cfg.variant) >= 2) {
        if (netl_path.empty())
            throw std::runtime_error("variant " + std::string(variant_name(cfg.variant)) +
                                     " needs a trained localization checkpoint (--netl)");
        net_l = load_net_l(spec, netl_path);
        net_l_ptr = &net_l;
    }

    std::string report;
    std::vector<QualityReport> qs;
    for (size_t i = 0; i < data.size(); ++i) {
        const Sample<F>& s = data[i];
        const InferOut r = run_infer(net, net_l_ptr, s.degraded, cfg);
        qs.push_back(evaluate_sample(r.restored, s.clean, r.mask, s.gt_mask));
        report += report_line(int(i), qs.back()) + "\n";
    }
    report += aggregate_line(qs) + "\n";

    const fs::path dir = ensure_out_dir(g);
    write_text(dir / "report.txt", report);
    std::fputs(report.c_str(), stdout);
    std::printf("wrote %s\n", (dir / "report.txt").string().c_str());
    return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::string& data_dir, const std::string& val_dir,
               int height, int width, int loc_iters) {
    NetSpec spec;
    TrainConfig base_cfg;
    load_run_config(g, spec, base_cfg);

    const auto data = load_dataset(data_dir, height, width);
    const auto val = load_dataset(val_dir, height, width);

    // one localization net shared by every guided variant
    Net<F> net_l = build_net_l<F>(spec, derive_seed(g.seed, 20));
    {
        TrainConfig lcfg = base_cfg;
        lcfg.phase = Phase::localize;
        lcfg.iters = loc_iters;
        lcfg.seed = derive_seed(g.seed, 21);
        lcfg.log_every = 0;
        train(net_l, nullptr, data, {}, lcfg);
    }

    const auto eval_mean = [&](const Net<F>& net, SnlPolicy policy) {
        double sp = 0.0, ss = 0.0;
        TrainConfig ecfg = base_cfg;
        ecfg.policy2 = policy;
        for (const Sample<F>& s : val) {
            InferOut r;
            if (variant_rank(net.variant) >= 2) {
                const LocResult<F> loc = forward_localize(net_l, s.degraded, ecfg.mask_threshold);
                const Mask<F>& guide =
                    ecfg.mask_source == MaskSource::ground_truth ? s.gt_mask : loc.mask;
                r.restored = forward_restore(net, s.degraded, guide, loc.feats, ecfg.policy2);
            } else {
                r.restored = forward_restore(net, s.degraded, Mask<F>(1, s.degraded.h, s.degraded.w), {});
            }
            sp += psnr(r.restored, s.clean);
            ss += ssim(r.restored, s.clean);
        }
        return std::pair<double, double>{sp / double(val.size()), ss / double(val.size())};
    };

    std::string table = "variant        params    val_psnr   val_ssim\n";
    const auto add_row = [&table](const std::string& name, uint64_t params, double p, double s) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-12s %9" PRIu64 "  %9.4f   %.6f\n", name.c_str(), params,
                      p, s);
        table += buf;
    };

    for (int k = 1; k <= 5; ++k) {
        const Variant v = variant_from_int(k);
        Net<F> net = build_variant(spec, v, derive_seed(g.seed, uint64_t(30 + k)));
        TrainConfig cfg = base_cfg;
        cfg.phase = Phase::restore;
        cfg.variant = v;
        cfg.seed = derive_seed(g.seed, uint64_t(40 + k));
        cfg.log_every = 0;
        train(net, variant_rank(v) >= 2 ? &net_l : nullptr, data, {}, cfg);

        const auto [p, s] = eval_mean(net, base_cfg.policy2);
        add_row(variant_name(v), param_count(net), p, s);
        if (v == Variant::net5) {
            // same trained net, second-step attention over all pixels
            const auto [p2, s2] = eval_mean(net, SnlPolicy::all_pixels);
            add_row("net5/allpix", param_count(net), p2, s2);
        }
    }

    const fs::path dir = ensure_out_dir(g);
    write_text(dir / "ablation.txt", table);
    std::fputs(table.c_str(), stdout);
    std::printf("wrote %s\n", (dir / "ablation.txt").string().c_str());
    return 0;
}

int cmd_gradcheck(int instances) {
    const auto reports = run_gradcheck_suite(instances);
    bool all_pass = true;
    for (const GradcheckReport& r : reports) {
        std::printf("op=%s instances=%d max_rel_err=%.3e status=%s\n", r.op.c_str(), r.instances,
                    r.max_rel_err, r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::printf("%s\n", all_pass ? "gradcheck: all ops pass" : "gradcheck: FAILURES above");
    return all_pass ? 0 : 1;
}

int cmd_bench(const GlobalOpts& g, const std::vector<int>& sizes, const std::vector<int>& widths,
              const std::vector<double>& densities, int repeats) {
    std::vector<std::pair<int, int>> resolutions;
    for (int s : sizes) resolutions.emplace_back(s, s);
    const auto rows = bench_sparse<F>(resolutions, widths, densities, repeats, g.seed);
    const std::string csv = bench_csv(rows);
    const fs::path dir = ensure_out_dir(g);
    write_text(dir / "bench.csv", csv);
    std::fputs(csv.c_str(), stdout);
    std::printf("wrote %s\n", (dir / "bench.csv").string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spair: mask-guided spatially adaptive image restoration toolchain"};
    app.require_subcommand(1);
    app.footer(std::string("config file keys:\n") + config_key_reference());

    GlobalOpts g;
    int exit_code = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic degraded dataset + manifest");
    add_global_opts(synth, g);
    int synth_count = 16, synth_h = 64, synth_w = 64;
    std::string synth_kinds = "streak,blob,shadow,region_blur";
    synth->add_option("--count", synth_count, "number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--height", synth_h, "sample height")->check(CLI::PositiveNumber);
    synth->add_option("--width", synth_w, "sample width")->check(CLI::PositiveNumber);
    synth->add_option("--kinds", synth_kinds, "comma-separated degradation kinds");
    synth->callback([&] { exit_code = cmd_synth(g, synth_count, synth_h, synth_w, synth_kinds); });

    // shared --data/--height/--width options
    std::string data_dir, val_dir, netl_path, netr_path, image_path, clean_path;
    int data_h = 64, data_w = 64;
    const auto add_data_opts = [&](CLI::App* cmd, bool need_data) {
        auto* o = cmd->add_option("--data", data_dir, "dataset dir holding manifest.txt");
        if (need_data) o->required();
        cmd->add_option("--height", data_h, "dataset sample height")->check(CLI::PositiveNumber);
        cmd->add_option("--width", data_w, "dataset sample width")->check(CLI::PositiveNumber);
    };

    // train-loc
    auto* tl = app.add_subcommand("train-loc", "train the distortion localization net");
    add_global_opts(tl, g);
    add_data_opts(tl, true);
    tl->callback([&] { exit_code = cmd_train_loc(g, data_dir, data_h, data_w); });

    // train-restore
    auto* tr = app.add_subcommand("train-restore", "train a restoration net variant");
    add_global_opts(tr, g);
    add_data_opts(tr, true);
    tr->add_option("--val-data", val_dir, "validation dataset dir (enables val_psnr logging)");
    tr->add_option("--netl", netl_path, "trained localization checkpoint (.sptn)");
    tr->callback(
        [&] { exit_code = cmd_train_restore(g, data_dir, val_dir, netl_path, data_h, data_w); });

    // infer
    auto* inf = app.add_subcommand("infer", "restore one PPM image");
    add_global_opts(inf, g);
    inf->add_option("--image", image_path, "degraded input image (.ppm)")->required();
    inf->add_option("--netr", netr_path, "restoration checkpoint (.sptn)")->required();
    inf->add_option("--netl", netl_path, "localization checkpoint (.sptn)");
    inf->add_option("--clean", clean_path, "optional clean reference for PSNR reporting");
    inf->callback([&] { exit_code = cmd_infer(g, image_path, netr_path, netl_path, clean_path); });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained net over a dataset");
    add_global_opts(ev, g);
    add_data_opts(ev, true);
    ev->add_option("--netr", netr_path, "restoration checkpoint (.sptn)")->required();
    ev->add_option("--netl", netl_path, "localization checkpoint (.sptn)");
    ev->callback([&] { exit_code = cmd_eval(g, data_dir, netr_path, netl_path, data_h, data_w); });

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare net1..net5 under one budget");
    add_global_opts(ab, g);
    add_data_opts(ab, true);
    ab->add_option("--val-data", val_dir, "held-out dataset dir for the comparison table")
        ->required();
    int loc_iters = 500;
    ab->add_option("--loc-iters", loc_iters, "localization pre-training iterations")
        ->check(CLI::PositiveNumber);
    ab->callback(
        [&] { exit_code = cmd_ablate(g, data_dir, val_dir, data_h, data_w, loc_iters); });

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "verify reverse-mode gradients against finite differences");
    add_global_opts(gc, g);
    int gc_instances = 10;
    gc->add_option("--instances", gc_instances, "random instances per op")
        ->check(CLI::PositiveNumber);
    gc->callback([&] { exit_code = cmd_gradcheck(gc_instances); });

    // bench
    auto* be = app.add_subcommand("bench", "measure sparse-vs-dense wall time and MAC counts");
    add_global_opts(be, g);
    std::vector<int> bench_sizes{64, 128};
    std::vector<int> bench_widths{8, 16};
    std::vector<double> bench_densities{0.0, 0.1, 0.5, 1.0};
    int bench_repeats = 5;
    be->add_option("--sizes", bench_sizes, "square resolutions")->delimiter(',');
    be->add_option("--widths", bench_widths, "channel widths")->delimiter(',');
    be->add_option("--densities", bench_densities, "mask densities in [0,1]")->delimiter(',');
    be->add_option("--repeats", bench_repeats, "timed repeats per row")->check(CLI::PositiveNumber);
    be->callback([&] {
        exit_code = cmd_bench(g, bench_sizes, bench_widths, bench_densities, bench_repeats);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the diagnostic and usage hint
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
