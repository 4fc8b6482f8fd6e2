// rkm: keypoint-based volume registration in scanner coordinates.
//
// Subcommands: register, warp, keypoints, eval, phantom.
// Exit codes: 0 success, 2 I/O or argument trouble, 3 degenerate solve,
// 4 detector failure. Errors are one machine-parsable line on stderr:
// `code=<N> msg=<text>`.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rkm/rkm.hpp"

namespace {

bool g_verbose = false;

void note(const std::string& msg) {
    if (g_verbose) std::cerr << "# " << msg << "\n";
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string raw_data_path(const std::string& meta_path) {
    // foo.rkm.txt -> foo.rkm.bin
    return meta_path.substr(0, meta_path.size() - 4) + ".bin";
}

rkm::Volume read_volume(const std::string& path) {
    if (ends_with(path, ".rkm.txt")) return rkm::read_raw(path, raw_data_path(path));
    return rkm::read_nifti(path);
}

void write_volume(const rkm::Volume& vol, const std::string& path) {
    if (ends_with(path, ".rkm.txt")) {
        rkm::write_raw(vol, path, raw_data_path(path));
        return;
    }
    rkm::write_nifti(vol, path);
}

void write_labels(const rkm::Volume& vol, const std::string& path) {
    if (ends_with(path, ".rkm.txt")) {
        rkm::Volume as_data(vol.dims, vol.affine);
        for (std::size_t i = 0; i < vol.labels.size(); ++i)
            as_data.data[i] = static_cast<float>(vol.labels[i]);
        rkm::write_raw(as_data, path, raw_data_path(path));
        return;
    }
    rkm::write_nifti_labels(vol, path);
}

void load_labels(rkm::Volume& vol, const std::string& path) {
    rkm::attach_labels(vol, read_volume(path));
}

std::vector<double> parse_reals(const std::string& text, const std::string& what, std::size_t n = 0) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw rkm::Error(what + ": cannot parse `" + item + "`");
        }
    if (n != 0 && out.size() != n)
        throw rkm::Error(what + ": expected " + std::to_string(n) + " comma-separated values");
    return out;
}

std::vector<int> parse_labels(const std::string& text) {
    std::vector<int> out;
    for (double v : parse_reals(text, "--labels")) out.push_back(static_cast<int>(v));
    return out;
}

rkm::SimilarityConfig parse_similarity(const std::string& terms, std::optional<double> lambda) {
    rkm::SimilarityConfig cfg;
    cfg.terms.clear();
    std::stringstream ss(terms);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double weight = 1.0;
        std::string name = item;
        const auto colon = item.find(':');
        if (colon != std::string::npos) {
            name = item.substr(0, colon);
            weight = std::stod(item.substr(colon + 1));
        }
        if (name == "mse")
            cfg.terms.push_back({rkm::SimilarityTerm::Mse, weight});
        else if (name == "ssim")
            cfg.terms.push_back({rkm::SimilarityTerm::Ssim, weight});
        else if (name == "dice")
            cfg.terms.push_back({rkm::SimilarityTerm::Dice, weight});
        else
            throw rkm::Error("--sim: unknown term `" + name + "` (mse, ssim, dice)");
    }
    cfg.tps_lambda = lambda;
    cfg.validate();
    return cfg;
}

rkm::KeypointSet detect_keypoints(const rkm::Volume& vol, const rkm::DetectorConfig& cfg,
                                  const std::string& which) {
    note("detecting keypoints on the " + which + " volume");
    const rkm::Volume normalized = rkm::zscore_normalize(vol);
    return rkm::center_of_mass(rkm::detect_blobs(normalized, cfg), cfg.min_activation_mass);
}

void write_report(const rkm::MetricReport& report, const std::string& path) {
    if (path.empty()) {
        std::cout << report.serialize();
        return;
    }
    rkm::detail::write_text_file(path, report.serialize());
}

// ---- subcommand payloads ------------------------------------------------------

struct RegisterArgs {
    std::string moving, fixed, moving_labels, fixed_labels;
    std::string transform = "affine";
    double lambda = 0.0;
    bool lambda_set = false;
    int n_keypoints = 8;
    std::string scales = "5,6.5,8";
    double min_mass = 0.0;
    std::string moving_keypoints, fixed_keypoints;
    int refine_iters = 0;
    double refine_step = 2.0;
    double refine_tol = 1e-6;
    std::string sim_terms = "mse";
    std::string out_transform, out_warped, out_warped_labels, out_report;
    std::string out_keypoints_moving, out_keypoints_fixed;
};

int run_register(const RegisterArgs& a, std::uint64_t seed) {
    if (a.transform == "tps" && !a.lambda_set)
        throw rkm::Error("--lambda is required with --transform tps");

    rkm::Volume moving = read_volume(a.moving);
    rkm::Volume fixed = read_volume(a.fixed);
    if (!a.moving_labels.empty()) load_labels(moving, a.moving_labels);
    if (!a.fixed_labels.empty()) load_labels(fixed, a.fixed_labels);

    rkm::DetectorConfig detector;
    detector.n_keypoints = a.n_keypoints;
    detector.blob_scales = parse_reals(a.scales, "--scales");
    detector.min_activation_mass = a.min_mass;

    rkm::KeypointSet km = a.moving_keypoints.empty()
                              ? detect_keypoints(moving, detector, "moving")
                              : rkm::read_keypoints(a.moving_keypoints);
    rkm::KeypointSet kf = a.fixed_keypoints.empty() ? detect_keypoints(fixed, detector, "fixed")
                                                    : rkm::read_keypoints(a.fixed_keypoints);
    if (km.size() != kf.size())
        throw rkm::DegenerateConfiguration("moving and fixed keypoint counts differ");

    if (a.refine_iters > 0) {
        note("refining keypoints, " + std::to_string(a.refine_iters) + " rounds max");
        rkm::SimilarityConfig scfg = parse_similarity(
            a.sim_terms,
            a.transform == "tps" ? std::optional<double>(a.lambda) : std::nullopt);
        rkm::RefinementConfig rcfg;
        rcfg.max_iters = a.refine_iters;
        rcfg.step_mm = a.refine_step;
        rcfg.tol = a.refine_tol;
        rcfg.rng_seed = seed;
        const rkm::RefinementResult res =
            rkm::refine_keypoints(moving, fixed, km, kf, scfg, rcfg);
        km = res.moving;
        kf = res.fixed;
        note("refined objective " + std::to_string(res.objective) + " after " +
             std::to_string(res.accepted_steps) + " accepted steps");
    }

    if (!a.out_keypoints_moving.empty()) rkm::write_keypoints(km, a.out_keypoints_moving);
    if (!a.out_keypoints_fixed.empty()) rkm::write_keypoints(kf, a.out_keypoints_fixed);

    rkm::WorldTransform t = rkm::WorldTransform::identity();
    if (a.transform == "affine") {
        const rkm::AffineTransform solved = rkm::solve_affine_weighted(km, kf);
        t = rkm::WorldTransform::from_moving_to_fixed_affine(solved);
        rkm::write_affine_transform(solved, a.out_transform);
    } else if (a.transform == "rigid") {
        const rkm::AffineTransform solved = rkm::solve_rigid_weighted(km, kf);
        t = rkm::WorldTransform::from_moving_to_fixed_rigid(solved);
        rkm::write_affine_transform(solved, a.out_transform);
    } else if (a.transform == "tps") {
        // warping pulls fixed-grid points back into the moving image, so the
        // spline is solved in that direction; the file stores the same map
        const rkm::TpsTransform pullback = rkm::solve_tps(kf, km, a.lambda);
        t = rkm::WorldTransform::from_pullback_tps(pullback);
        rkm::write_tps_transform(pullback, a.out_transform);
    } else {
        throw rkm::Error("--transform must be rigid, affine or tps");
    }

    note("warping");
    const rkm::Volume warped = rkm::warp_to_fixed_grid(moving, fixed, t);
    write_volume(warped, a.out_warped);
    if (!a.out_warped_labels.empty()) {
        if (!warped.has_labels())
            throw rkm::Error("--out-warped-labels given but the moving volume has no labels");
        write_labels(warped, a.out_warped_labels);
    }

    rkm::MetricReport report = rkm::evaluate_pair(warped, fixed);
    write_report(report, a.out_report);
    return 0;
}

struct WarpArgs {
    std::string moving, fixed, transform_file, out;
    std::string moving_labels, out_labels;
    bool nearest = false;
};

int run_warp(const WarpArgs& a) {
    rkm::Volume moving = read_volume(a.moving);
    const rkm::Volume fixed = read_volume(a.fixed);
    if (!a.moving_labels.empty()) load_labels(moving, a.moving_labels);

    const rkm::TransformFile tf = rkm::read_transform_file(a.transform_file);
    const rkm::WorldTransform t =
        tf.kind == rkm::TransformFile::Kind::Tps
            ? rkm::WorldTransform::from_pullback_tps(tf.tps)
            : rkm::WorldTransform::from_moving_to_fixed_affine(tf.affine);

    const rkm::Volume warped = rkm::warp_to_fixed_grid(
        moving, fixed, t,
        a.nearest ? rkm::InterpolationMode::Nearest : rkm::InterpolationMode::Trilinear);
    write_volume(warped, a.out);
    if (!a.out_labels.empty()) {
        if (!warped.has_labels())
            throw rkm::Error("--out-labels given but no --labels input was provided");
        write_labels(warped, a.out_labels);
    }
    return 0;
}

struct KeypointsArgs {
    std::string volume, activations, out;
    int n_keypoints = 8;
    std::string scales = "5,6.5,8";
    double min_mass = 0.0;
};

int run_keypoints(const KeypointsArgs& a) {
    const rkm::Volume vol = read_volume(a.volume);
    rkm::KeypointSet kps = [&] {
        if (!a.activations.empty()) {
            // externally produced activation maps; the volume supplies the grid
            const rkm::ActivationStack stack = rkm::read_activation_stack(a.activations, vol.affine);
            return rkm::center_of_mass(stack, a.min_mass);
        }
        rkm::DetectorConfig cfg;
        cfg.n_keypoints = a.n_keypoints;
        cfg.blob_scales = parse_reals(a.scales, "--scales");
        cfg.min_activation_mass = a.min_mass;
        return detect_keypoints(vol, cfg, "input");
    }();

    if (a.out.empty()) {
        std::ostringstream os;
        os.precision(17);
        for (std::size_t i = 0; i < kps.size(); ++i)
            os << kps.point(i).x << " " << kps.point(i).y << " " << kps.point(i).z << " "
               << kps.confidence(i) << "\n";
        std::cout << os.str();
    } else {
        rkm::write_keypoints(kps, a.out);
    }
    return 0;
}

struct EvalArgs {
    std::string a, b, a_labels, b_labels, labels, out;
    double percentile = 100.0;
};

int run_eval(const EvalArgs& args) {
    rkm::Volume a = read_volume(args.a);
    rkm::Volume b = read_volume(args.b);
    if (!args.a_labels.empty()) load_labels(a, args.a_labels);
    if (!args.b_labels.empty()) load_labels(b, args.b_labels);

    std::vector<int> labels;
    if (!args.labels.empty()) labels = parse_labels(args.labels);

    rkm::MetricReport report = rkm::evaluate_pair(a, b, labels);
    if (args.percentile < 100.0 && a.has_labels() && b.has_labels() && !report.hausdorff.empty()) {
        std::vector<int> used;
        for (const auto& [label, _] : report.hausdorff) used.push_back(label);
        report.hausdorff = rkm::hausdorff_mm(a, b, used, args.percentile);
        double sum = 0.0;
        for (const auto& [_, v] : report.hausdorff) sum += v;
        report.hausdorff_mean = sum / static_cast<double>(report.hausdorff.size());
    }
    write_report(report, args.out);
    return 0;
}

struct PhantomArgs {
    std::string spec, out_prefix;
    std::string translate, transform_file;
    std::string spacing_moving = "1,1,1", spacing_fixed = "1,1,1";
    std::string orientation = "axial";
    std::string format = "nii.gz";
};

int run_phantom(const PhantomArgs& a, std::optional<std::uint64_t> seed) {
    rkm::PhantomSpec spec = rkm::PhantomSpec::parse(rkm::detail::read_text_file(a.spec));
    if (seed) spec.rng_seed = *seed;

    rkm::WorldTransform g = rkm::WorldTransform::identity();
    if (!a.translate.empty() && !a.transform_file.empty())
        throw rkm::Error("--translate and --transform-file are mutually exclusive");
    if (!a.translate.empty()) {
        const std::vector<double> t = parse_reals(a.translate, "--translate", 3);
        g = rkm::WorldTransform::from_moving_to_fixed_affine(
            rkm::AffineTransform(rkm::WorldAffine::translation(t[0], t[1], t[2]).matrix()));
    } else if (!a.transform_file.empty()) {
        const rkm::TransformFile tf = rkm::read_transform_file(a.transform_file);
        g = tf.kind == rkm::TransformFile::Kind::Tps
                ? rkm::WorldTransform::from_pullback_tps(tf.tps)
                : rkm::WorldTransform::from_moving_to_fixed_affine(tf.affine);
    }

    rkm::Orientation orientation = rkm::Orientation::Axial;
    if (a.orientation == "coronal")
        orientation = rkm::Orientation::Coronal;
    else if (a.orientation == "sagittal")
        orientation = rkm::Orientation::Sagittal;
    else if (a.orientation != "axial")
        throw rkm::Error("--orientation-fixed must be axial, coronal or sagittal");

    const std::vector<double> sm = parse_reals(a.spacing_moving, "--spacing-moving", 3);
    const std::vector<double> sf = parse_reals(a.spacing_fixed, "--spacing-fixed", 3);
    const rkm::GroundTruth gt =
        rkm::make_pair(spec, g, {sm[0], sm[1], sm[2]}, {sf[0], sf[1], sf[2]}, orientation);

    const std::string ext = a.format == "raw" ? ".rkm.txt" : "." + a.format;
    const std::string moving_path = a.out_prefix + "_moving" + ext;
    const std::string fixed_path = a.out_prefix + "_fixed" + ext;
    const std::string moving_labels_path = a.out_prefix + "_moving_labels" + ext;
    const std::string fixed_labels_path = a.out_prefix + "_fixed_labels" + ext;
    const std::string km_path = a.out_prefix + "_keypoints_moving.txt";
    const std::string kf_path = a.out_prefix + "_keypoints_fixed.txt";
    const std::string transform_path = a.out_prefix + "_transform.txt";

    write_volume(gt.moving, moving_path);
    write_volume(gt.fixed, fixed_path);
    write_labels(gt.moving, moving_labels_path);
    write_labels(gt.fixed, fixed_labels_path);
    rkm::write_keypoints(gt.true_moving, km_path);
    rkm::write_keypoints(gt.true_fixed, kf_path);
    if (gt.world_transform.kind() == rkm::WorldTransform::Kind::Tps)
        rkm::write_tps_transform(gt.world_transform.tps(), transform_path);
    else
        rkm::write_affine_transform(rkm::AffineTransform(gt.world_transform.solution_matrix()),
                                    transform_path);

    for (const auto& p : {moving_path, fixed_path, moving_labels_path, fixed_labels_path, km_path,
                          kf_path, transform_path})
        std::cout << p << "\n";
    return 0;
}

std::string one_line(std::string msg) {
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    return msg;
}

int fail(int code, const std::string& msg) {
    std::cerr << "code=" << code << " msg=" << one_line(msg) << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keypoint-based volume registration in scanner coordinates"};
    app.require_subcommand(1);

    int threads = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--threads", threads, "worker thread cap (default 1)");
    app.add_option("--seed", seed, "seed for stochastic steps")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_flag("--verbose", g_verbose, "progress notes on stderr");

    RegisterArgs reg;
    CLI::App* reg_cmd = app.add_subcommand("register", "solve a transform and warp moving onto fixed");
    reg_cmd->add_option("--moving", reg.moving)->required();
    reg_cmd->add_option("--fixed", reg.fixed)->required();
    reg_cmd->add_option("--moving-labels", reg.moving_labels);
    reg_cmd->add_option("--fixed-labels", reg.fixed_labels);
    reg_cmd->add_option("--transform", reg.transform, "rigid | affine | tps");
    reg_cmd->add_option("--lambda", reg.lambda, "TPS rigidity (required for tps)")
        ->each([&reg](const std::string&) { reg.lambda_set = true; });
    reg_cmd->add_option("--keypoints", reg.n_keypoints, "detector keypoint count");
    reg_cmd->add_option("--scales", reg.scales, "detector sigmas in mm, comma-separated");
    reg_cmd->add_option("--min-mass", reg.min_mass, "detector activation-mass floor");
    reg_cmd->add_option("--moving-keypoints", reg.moving_keypoints, "keypoint file instead of detection");
    reg_cmd->add_option("--fixed-keypoints", reg.fixed_keypoints, "keypoint file instead of detection");
    reg_cmd->add_option("--refine-iters", reg.refine_iters, "pattern-search rounds (0 = off)");
    reg_cmd->add_option("--refine-step", reg.refine_step, "initial refinement step, mm");
    reg_cmd->add_option("--refine-tol", reg.refine_tol, "refinement improvement cutoff");
    reg_cmd->add_option("--sim", reg.sim_terms, "objective terms, e.g. mse or ssim:1,dice:2");
    reg_cmd->add_option("--out-transform", reg.out_transform)->required();
    reg_cmd->add_option("--out-warped", reg.out_warped)->required();
    reg_cmd->add_option("--out-warped-labels", reg.out_warped_labels);
    reg_cmd->add_option("--out-report", reg.out_report, "metric report path (default stdout)");
    reg_cmd->add_option("--out-keypoints-moving", reg.out_keypoints_moving);
    reg_cmd->add_option("--out-keypoints-fixed", reg.out_keypoints_fixed);

    WarpArgs warp;
    CLI::App* warp_cmd = app.add_subcommand("warp", "apply a stored transform");
    warp_cmd->add_option("--moving", warp.moving)->required();
    warp_cmd->add_option("--fixed", warp.fixed, "grid-defining volume")->required();
    warp_cmd->add_option("--transform-file", warp.transform_file)->required();
    warp_cmd->add_option("--out", warp.out)->required();
    warp_cmd->add_option("--labels", warp.moving_labels, "moving label grid to warp alongside");
    warp_cmd->add_option("--out-labels", warp.out_labels);
    warp_cmd->add_flag("--nearest", warp.nearest, "nearest-neighbor intensity sampling");

    KeypointsArgs kp;
    CLI::App* kp_cmd = app.add_subcommand("keypoints", "detect keypoints, one `x y z conf` line each");
    kp_cmd->add_option("--volume", kp.volume)->required();
    kp_cmd->add_option("--activations", kp.activations, "precomputed activation stack file");
    kp_cmd->add_option("--keypoints", kp.n_keypoints);
    kp_cmd->add_option("--scales", kp.scales);
    kp_cmd->add_option("--min-mass", kp.min_mass);
    kp_cmd->add_option("--out", kp.out, "output path (default stdout)");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "metric report for two volumes on one grid");
    eval_cmd->add_option("--a", ev.a)->required();
    eval_cmd->add_option("--b", ev.b)->required();
    eval_cmd->add_option("--a-labels", ev.a_labels);
    eval_cmd->add_option("--b-labels", ev.b_labels);
    eval_cmd->add_option("--labels", ev.labels, "labels to score, comma-separated (default: all)");
    eval_cmd->add_option("--percentile", ev.percentile, "Hausdorff percentile (default 100)");
    eval_cmd->add_option("--out", ev.out, "report path (default stdout)");

    PhantomArgs ph;
    CLI::App* ph_cmd = app.add_subcommand("phantom", "render a ground-truth pair from a spec");
    ph_cmd->add_option("--spec", ph.spec)->required();
    ph_cmd->add_option("--out-prefix", ph.out_prefix)->required();
    ph_cmd->add_option("--translate", ph.translate, "moving->fixed translation `x,y,z` in mm");
    ph_cmd->add_option("--transform-file", ph.transform_file, "moving->fixed transform file");
    ph_cmd->add_option("--spacing-moving", ph.spacing_moving, "mm per voxel, `a,b,c`");
    ph_cmd->add_option("--spacing-fixed", ph.spacing_fixed, "mm per voxel, `a,b,c`");
    ph_cmd->add_option("--orientation-fixed", ph.orientation, "axial | coronal | sagittal");
    ph_cmd->add_option("--format", ph.format, "nii | nii.gz | raw");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::ostringstream os;
        const int rc = app.exit(e, os, os);
        (void)rc;
        return fail(2, os.str());
    }

    rkm::set_thread_cap(threads);

    try {
        if (*reg_cmd) return run_register(reg, seed);
        if (*warp_cmd) return run_warp(warp);
        if (*kp_cmd) return run_keypoints(kp);
        if (*eval_cmd) return run_eval(ev);
        if (*ph_cmd) return run_phantom(ph, seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt);
    } catch (const rkm::DegenerateConfiguration& e) {
        return fail(3, e.what());
    } catch (const rkm::SingularAffine& e) {
        return fail(3, e.what());
    } catch (const rkm::ConstantVolume& e) {
        return fail(4, e.what());
    } catch (const rkm::InsufficientStructure& e) {
        return fail(4, e.what());
    } catch (const rkm::ZeroMassMap& e) {
        return fail(4, e.what());
    } catch (const std::exception& e) {
        return fail(2, e.what());
    }
    return 0;
}
