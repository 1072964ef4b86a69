#include "cppruner/cli.hpp"

#include "cppruner/checkpoint.hpp"
#include "cppruner/error.hpp"
#include "cppruner/io.hpp"
#include "cppruner/metrics.hpp"
#include "cppruner/parallel.hpp"
#include "cppruner/tasks.hpp"
#include "cppruner/verification.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cppruner {

namespace {

/// Bad command-line usage detected after parsing.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainArgs {
    TrainConfig cfg;
    std::size_t width = 0;
    std::size_t layers = 3;
    std::string activation = "sine";
    bool no_bias = false;
    std::string trace;

    explicit TrainArgs(TrainConfig c) : cfg(std::move(c)) {
        width = cfg.field.hidden.empty() ? 256 : cfg.field.hidden.front();
        layers = cfg.field.hidden.size() + 1;
    }
};

void add_train_options(CLI::App* sub, TrainArgs& a) {
    sub->add_option("--rank", a.cfg.field.rank, "CP rank R")->capture_default_str();
    sub->add_option("--p", a.cfg.reg.p, "Schatten exponent p in (0, 1]")->capture_default_str();
    sub->add_option("--lambda-vsp", a.cfg.reg.lambda_vsp, "low-rank weight")->capture_default_str();
    sub->add_option("--lambda-j", a.cfg.reg.lambda_j, "smoothness weight")->capture_default_str();
    sub->add_option("--kappa", a.cfg.reg.kappa, "perturbation scale")->capture_default_str();
    sub->add_option("--samples", a.cfg.reg.hutchinson_samples, "perturbations per step")
        ->capture_default_str();
    sub->add_option("--iters", a.cfg.iterations, "Adam steps")->capture_default_str();
    sub->add_option("--seed", a.cfg.seed, "master seed")->capture_default_str();
    sub->add_option("--lr", a.cfg.adam.lr, "learning rate")->capture_default_str();
    sub->add_option("--width", a.width, "hidden width")->capture_default_str();
    sub->add_option("--layers", a.layers, "weight layers per axis")->capture_default_str();
    sub->add_option("--fourier-terms", a.cfg.field.fourier_terms, "Fourier terms m")
        ->capture_default_str();
    sub->add_option("--base-freq", a.cfg.field.base_frequency, "lowest Fourier frequency")
        ->capture_default_str();
    sub->add_option("--activation", a.activation, "sine | tanh | relu")->capture_default_str();
    sub->add_flag("--activated-head", a.cfg.field.activated_head, "activate the output layer too");
    sub->add_flag("--no-bias", a.no_bias, "drop layer biases");
    sub->add_option("--trace", a.trace, "loss trace CSV path");
    sub->add_option("--trace-every", a.cfg.trace_every, "trace interval")->capture_default_str();
}

TrainConfig finalize(TrainArgs& a) {
    if (a.layers == 0) throw UsageError("--layers must be at least 1");
    if (a.width == 0) throw UsageError("--width must be positive");
    a.cfg.field.hidden.assign(a.layers - 1, a.width);
    try {
        a.cfg.field.hidden_activation = parse_activation(a.activation);
    } catch (const StructuralError& e) {
        throw UsageError(e.what());
    }
    a.cfg.field.bias = !a.no_bias;
    try {
        a.cfg.validate();
    } catch (const StructuralError& e) {
        throw UsageError(e.what());
    }
    return a.cfg;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string derived_path(const std::string& path, const std::string& tag) {
    const auto dot = path.find_last_of('.');
    const auto slash = path.find_last_of('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return path + "." + tag + ".cpt";
    return path.substr(0, dot) + "." + tag + path.substr(dot);
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

// Window adapted to small slices: the largest odd size up to 11 that fits.
SsimOptions ssim_options_for(const Shape& shape) {
    SsimOptions o;
    const std::size_t fit = std::min<std::size_t>(11, std::min(shape[0], shape[1]));
    o.window = fit % 2 == 1 ? fit : fit - 1;
    o.sigma = 1.5 * static_cast<double>(o.window) / 11.0;
    return o;
}

void write_preview_if(const std::string& path, const std::string& slice, const DenseTensor& t) {
    if (path.empty()) return;
    write_image_preview(t, path, slice.empty() ? SliceSpec::defaults(t.shape()) : SliceSpec::parse(slice));
}

// Reads "key = value" lines into "--key value" tokens. "true" becomes a bare
// flag and "false" is dropped.
std::vector<std::string> config_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
        if (value == "false") continue;
        out.push_back("--" + key);
        if (value != "true") out.push_back(value);
    }
    return out;
}

// Splices config-file settings in front of the command-line flags so the
// latter win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::string config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a path");
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config.empty() || rest.empty()) return rest;
    std::vector<std::string> out{rest.front()};
    for (auto& t : config_tokens(config)) out.push_back(t);
    out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

} // namespace

int cli_run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    parallel::configure_from_env();

    CLI::App app{"Low-rank neural tensor fields: inpainting, denoising, point-cloud upsampling",
                 "cppruner"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_help_all_flag("--help-all", "show help for every subcommand");
    app.footer("Settings may also come from --config FILE (key = value lines); flags override it.");

    // inpaint
    auto* inp = app.add_subcommand("inpaint", "complete a partially observed tensor");
    TrainArgs inp_args(inpaint_defaults());
    std::string inp_input, inp_mask, inp_out, inp_truth, inp_preview, inp_slice, inp_model;
    double inp_sr = -1.0;
    inp->add_option("--input", inp_input, "observed tensor (CPT1)")->required();
    auto* sr_opt = inp->add_option("--sr", inp_sr, "sample a mask with this rate");
    auto* mask_opt = inp->add_option("--mask", inp_mask, "mask tensor, nonzero = observed");
    sr_opt->excludes(mask_opt);
    inp->add_option("--out", inp_out, "recovered tensor (CPT1)")->required();
    inp->add_option("--truth", inp_truth, "ground truth for PSNR reporting");
    inp->add_option("--preview", inp_preview, "PGM/PPM preview of the result");
    inp->add_option("--slice", inp_slice, "preview band(s): k or r,g,b");
    inp->add_option("--model-out", inp_model, "trained field (CPF1)");
    add_train_options(inp, inp_args);

    // denoise
    auto* den = app.add_subcommand("denoise", "split a tensor into low-rank and sparse parts");
    TrainArgs den_args(denoise_defaults());
    std::string den_input, den_out, den_sparse, den_noisy, den_preview, den_slice, den_model;
    int den_case = 0;
    bool den_raw = false;
    den->add_option("--input", den_input, "tensor (CPT1)")->required();
    auto* case_opt = den->add_option("--case", den_case, "corrupt the input with noise case 1..5 first")
                         ->check(CLI::Range(1, 5));
    auto* raw_opt = den->add_flag("--raw", den_raw, "treat the input as already noisy");
    case_opt->excludes(raw_opt);
    den->add_option("--lambda-s", den_args.cfg.lambda_s, "sparse weight")->capture_default_str();
    den->add_option("--out", den_out, "clean tensor (CPT1)")->required();
    den->add_option("--sparse-out", den_sparse, "sparse tensor (default <out>.sparse.cpt)");
    den->add_option("--noisy-out", den_noisy, "corrupted input (with --case)");
    den->add_option("--preview", den_preview, "PGM/PPM preview of the clean tensor");
    den->add_option("--slice", den_slice, "preview band(s): k or r,g,b");
    den->add_option("--model-out", den_model, "trained field (CPF1)");
    add_train_options(den, den_args);

    // sdf
    auto* sdf = app.add_subcommand("sdf", "fit a signed distance field to a point cloud");
    TrainArgs sdf_args(sdf_defaults());
    std::string sdf_points, sdf_out;
    sdf->add_option("--points", sdf_points, "input points (XYZ)")->required();
    sdf->add_option("--out", sdf_out, "model (CPF1)")->required();
    sdf->add_option("--lambda-eik", sdf_args.cfg.lambda_eikonal, "eikonal weight")->capture_default_str();
    sdf->add_option("--lambda-off", sdf_args.cfg.lambda_offsurface, "off-surface weight")
        ->capture_default_str();
    sdf->add_option("--free-factor", sdf_args.cfg.free_factor, "free samples per input point")
        ->capture_default_str();
    sdf->add_option("--vsp-grid", sdf_args.cfg.vsp_grid, "reference grid for the low-rank term")
        ->capture_default_str();
    sdf->add_flag("--fd-eikonal", sdf_args.cfg.finite_difference_eikonal,
                  "finite-difference surface gradients");
    add_train_options(sdf, sdf_args);

    // upsample
    auto* ups = app.add_subcommand("upsample", "extract a dense point cloud from an SDF model");
    std::string ups_model, ups_out;
    double ups_tau = 0.05;
    std::size_t ups_grid = 128, ups_min = 1000;
    bool ups_dense = false;
    ups->add_option("--model", ups_model, "SDF model (CPF1)")->required();
    ups->add_option("--out", ups_out, "output points (XYZ)")->required();
    ups->add_option("--tau", ups_tau, "level-set band half-width")->capture_default_str();
    ups->add_option("--grid", ups_grid, "grid resolution G")->capture_default_str()->check(CLI::Range(2, 4096));
    ups->add_option("--min-count", ups_min, "retry once at 2G below this count")->capture_default_str();
    ups->add_flag("--dense-scale", ups_dense, "minimum count 100000");

    // verify
    auto* ver = app.add_subcommand("verify", "run a numerical certification suite");
    std::string ver_suite, ver_csv;
    std::size_t ver_n = 0, ver_samples = 100000;
    std::uint64_t ver_seed = 1;
    double ver_kappa = 1e-3;
    ver->add_option("--suite", ver_suite, "theorem1 | gradients | hutchinson | normchain")
        ->required()
        ->check(CLI::IsMember({"theorem1", "gradients", "hutchinson", "normchain"}));
    ver->add_option("--n", ver_n, "instances (default 1000 / 100 / 10 fields / 100 points)");
    ver->add_option("--seed", ver_seed, "seed")->capture_default_str();
    ver->add_option("--samples", ver_samples, "draws per Hutchinson estimate")->capture_default_str();
    ver->add_option("--kappa", ver_kappa, "Hutchinson scale")->capture_default_str();
    ver->add_option("--csv", ver_csv, "append the report as CSV");

    // metrics
    auto* met = app.add_subcommand("metrics", "compare two tensors or two point clouds");
    std::string met_ref, met_est, met_thr = "auto";
    bool met_norm = false;
    met->add_option("--ref", met_ref, "reference (CPT1 or XYZ)")->required();
    met->add_option("--est", met_est, "estimate (CPT1 or XYZ)")->required();
    met->add_option("--fscore-thr", met_thr, "F-score distance or auto (1% of diagonal)")
        ->capture_default_str();
    met->add_flag("--normalize", met_norm, "min-max both tensors by the reference range first");

    // synth
    auto* syn = app.add_subcommand("synth", "generate synthetic tensors or sphere points");
    std::string syn_shape, syn_out, syn_noisy, syn_sparse;
    std::size_t syn_rank = 3, syn_sphere = 0;
    bool syn_smooth = false, syn_no_clamp = false;
    int syn_case = 0;
    std::uint64_t syn_seed = 7;
    syn->add_option("--shape", syn_shape, "e.g. 32x32x8");
    syn->add_option("--rank", syn_rank, "CP rank")->capture_default_str();
    syn->add_flag("--smooth", syn_smooth, "binomially smoothed factors");
    syn->add_option("--noise-case", syn_case, "also write a corrupted copy (1..5)")->check(CLI::Range(1, 5));
    syn->add_flag("--no-clamp", syn_no_clamp, "keep noisy values outside [0, 1]");
    syn->add_option("--sphere", syn_sphere, "write this many unit-sphere points instead");
    syn->add_option("--seed", syn_seed, "seed")->capture_default_str();
    syn->add_option("--out", syn_out, "clean tensor (CPT1) or points (XYZ)")->required();
    syn->add_option("--noisy-out", syn_noisy, "corrupted tensor (default <out>.noisy.cpt)");
    syn->add_option("--sparse-out", syn_sparse, "mask of sparse corruption (CPT1)");

    // mass
    auto* mas = app.add_subcommand("mass", "print the share of each CP component");
    std::string mas_model;
    std::size_t mas_grid = 64;
    double mas_thr = 0.01;
    mas->add_option("--model", mas_model, "model (CPF1)")->required();
    mas->add_option("--grid", mas_grid, "points per axis")->capture_default_str()->check(CLI::Range(2, 1 << 20));
    mas->add_option("--threshold", mas_thr, "count components above this share")->capture_default_str();

    std::vector<std::string> args;
    try {
        args = expand_config(raw_args);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    std::vector<std::string> argv_store{"cppruner"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands()) sub = s;
        err << (sub ? sub->help() : app.help());
        return 1;
    }

    try {
        if (inp->parsed()) {
            const TrainConfig cfg = finalize(inp_args);
            if (inp_sr < 0.0 && inp_mask.empty()) throw UsageError("inpaint needs --sr or --mask");
            const DenseTensor y = read_tensor(inp_input);
            ObservationMask mask = inp_mask.empty() ? sample_mask(y.shape(), inp_sr, cfg.seed)
                                                    : ObservationMask::from_tensor(read_tensor(inp_mask));
            std::optional<DenseTensor> truth;
            if (!inp_truth.empty()) truth = read_tensor(inp_truth);
            const auto res = inpaint(y, mask, cfg, truth ? &*truth : nullptr);
            write_tensor(res.tensor, inp_out);
            if (!inp_args.trace.empty()) write_trace_csv(res.trace, inp_args.trace);
            if (!inp_model.empty()) write_checkpoint({res.params, std::nullopt}, inp_model);
            write_preview_if(inp_preview, inp_slice, res.tensor);
            out << "observed=" << mask.count << "/" << y.size()
                << " observed_rmse=" << fmt(res.observed_rmse);
            if (truth) out << " psnr=" << fmt(psnr(*truth, res.tensor)) << " nrmse=" << fmt(nrmse(*truth, res.tensor));
            out << "\n";
        } else if (den->parsed()) {
            const TrainConfig cfg = finalize(den_args);
            if (den_case == 0 && !den_raw) throw UsageError("denoise needs --case or --raw");
            const DenseTensor input = read_tensor(den_input);
            DenseTensor noisy = input;
            if (den_case != 0) {
                noisy = apply_noise(input, NoiseSpec::from_case(den_case), cfg.seed).tensor;
                if (!den_noisy.empty()) write_tensor(noisy, den_noisy);
            }
            const auto res = denoise(noisy, cfg, den_case != 0 ? &input : nullptr);
            write_tensor(res.clean, den_out);
            write_tensor(res.sparse, den_sparse.empty() ? derived_path(den_out, "sparse") : den_sparse);
            if (!den_args.trace.empty()) write_trace_csv(res.trace, den_args.trace);
            if (!den_model.empty()) write_checkpoint({res.params, std::nullopt}, den_model);
            write_preview_if(den_preview, den_slice, res.clean);
            std::size_t support = 0;
            for (double v : res.sparse.values()) support += v != 0.0;
            out << "sparse_support=" << support << "/" << res.sparse.size();
            if (den_case != 0)
                out << " observed_psnr=" << fmt(psnr(input, noisy)) << " psnr=" << fmt(psnr(input, res.clean));
            out << "\n";
        } else if (sdf->parsed()) {
            const TrainConfig cfg = finalize(sdf_args);
            const PointCloud pts = read_points(sdf_points);
            const auto res = sdf_train(pts, cfg);
            write_checkpoint({res.model.params, res.model.normalization}, sdf_out);
            if (!sdf_args.trace.empty()) write_trace_csv(res.trace, sdf_args.trace);
            out << "points=" << pts.size() << " final_loss=" << fmt(res.trace.empty() ? 0.0 : res.trace.back().loss)
                << "\n";
        } else if (ups->parsed()) {
            const Checkpoint ck = read_checkpoint(ups_model);
            if (!ck.normalization) throw std::runtime_error("model carries no point normalization");
            if (ups_tau < 0.0) throw UsageError("--tau must be >= 0");
            const auto res = upsample(SdfModel{ck.params, *ck.normalization}, ups_grid, ups_tau,
                                      ups_dense ? 100000 : ups_min);
            write_points(res.points, ups_out);
            out << "points=" << res.points.size() << " grid=" << res.grid << "\n";
        } else if (ver->parsed()) {
            CheckReport r;
            if (ver_suite == "theorem1") r = check_unfolding_bounds(ver_n ? ver_n : 1000, ver_seed);
            else if (ver_suite == "gradients") r = check_gradients(ver_n ? ver_n : 100, ver_seed);
            else if (ver_suite == "hutchinson") r = hutchinson_suite(ver_n ? ver_n : 10, ver_samples, ver_kappa, ver_seed);
            else r = normchain_suite(ver_n ? ver_n : 100, ver_seed);
            out << r.summary() << "\n";
            if (!ver_csv.empty()) {
                std::ifstream probe(ver_csv);
                const bool fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
                std::ofstream csv(ver_csv, std::ios::app);
                if (!csv) throw std::runtime_error("cannot open " + ver_csv);
                if (fresh) csv << CheckReport::csv_header() << "\n";
                csv << r.csv_row() << "\n";
            }
            return r.passed() ? 0 : 3;
        } else if (met->parsed()) {
            if (ends_with(met_ref, ".xyz") || ends_with(met_est, ".xyz")) {
                const PointCloud a = read_points(met_ref), b = read_points(met_est);
                double thr = 0.0;
                if (met_thr == "auto") {
                    thr = default_fscore_threshold(a);
                } else {
                    try {
                        thr = std::stod(met_thr);
                    } catch (const std::exception&) {
                        throw UsageError("--fscore-thr must be a number or auto");
                    }
                }
                out << "chamfer=" << fmt(chamfer(b, a)) << " fscore=" << fmt(f_score(b, a, thr))
                    << " threshold=" << fmt(thr) << "\n";
            } else {
                DenseTensor a = read_tensor(met_ref), b = read_tensor(met_est);
                require_same_shape(a, b);
                if (met_norm) normalize_by_reference(a, b);
                out << "psnr=" << fmt(psnr(a, b));
                if (a.order() >= 2) out << " ssim=" << fmt(ssim(a, b, ssim_options_for(a.shape())));
                out << " nrmse=" << fmt(nrmse(a, b)) << "\n";
            }
        } else if (syn->parsed()) {
            if (syn_sphere > 0) {
                write_points(sphere_points(syn_sphere, 1.0, syn_seed), syn_out);
                out << "points=" << syn_sphere << "\n";
            } else {
                if (syn_shape.empty()) throw UsageError("synth needs --shape or --sphere");
                Shape shape;
                try {
                    shape = parse_shape(syn_shape);
                } catch (const StructuralError& e) {
                    throw UsageError(e.what());
                }
                const auto s = synth_lowrank(shape, syn_rank, syn_smooth, syn_seed);
                if (s.rank_exceeds_dims) err << "warning: rank exceeds the smallest dimension\n";
                write_tensor(s.tensor, syn_out);
                if (syn_case != 0) {
                    NoiseSpec spec = NoiseSpec::from_case(syn_case);
                    spec.clamp = !syn_no_clamp;
                    const auto noisy = apply_noise(s.tensor, spec, syn_seed);
                    write_tensor(noisy.tensor, syn_noisy.empty() ? derived_path(syn_out, "noisy") : syn_noisy);
                    if (!syn_sparse.empty()) {
                        DenseTensor m(shape);
                        for (std::size_t i = 0; i < m.size(); ++i) m[i] = noisy.sparse[i];
                        write_tensor(m, syn_sparse);
                    }
                }
                out << "shape=" << syn_shape << " rank=" << syn_rank << "\n";
            }
        } else if (mas->parsed()) {
            const Checkpoint ck = read_checkpoint(mas_model);
            const auto profile = cp_mass_profile(grid_factors(ck.params, reference_grid(ck.params, mas_grid)));
            std::size_t above = 0;
            for (const auto& e : profile) {
                out << e.component << " " << fmt(e.fraction) << "\n";
                above += e.fraction > mas_thr;
            }
            out << "components_above_" << fmt(mas_thr) << "=" << above << "\n";
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int cli_main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cli_run(args, std::cout, std::cerr);
}

} // namespace cppruner
