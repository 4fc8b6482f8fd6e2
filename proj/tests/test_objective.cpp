#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "rkm/objective.hpp"
#include "rkm/phantom.hpp"
#include "support.hpp"

using namespace rkm;

namespace {

GroundTruth translated_pair() {
    const PhantomSpec spec = rkm_tests::sphere_phantom();
    const WorldTransform g = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::translation(8, -4, 6).matrix()));
    return make_pair(spec, g, {3, 3, 3}, {3, 3, 3});
}

KeypointSet perturbed(const KeypointSet& kps, double magnitude_mm, std::uint64_t seed) {
    std::mt19937 rng(static_cast<unsigned>(seed));
    std::normal_distribution<double> dir(0.0, 1.0);
    std::vector<WorldPoint> pts = kps.points();
    for (auto& p : pts) {
        WorldPoint d{dir(rng), dir(rng), dir(rng)};
        const double n = norm(d);
        if (n > 0) p = p + (magnitude_mm / n) * d;
    }
    return KeypointSet(pts, kps.confidences());
}

double mean_transfer_error(const AffineTransform& solved, const KeypointSet& true_m,
                           const KeypointSet& true_f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < true_m.size(); ++i)
        acc += distance(apply(solved, true_m.point(i)), true_f.point(i));
    return acc / static_cast<double>(true_m.size());
}

}  // namespace

TEST_CASE("self similarity: identical volumes and keypoints") {
    const PhantomSpec spec = rkm_tests::sphere_phantom();
    const Volume vol = render(spec, {48, 48, 48}, WorldAffine::scaling(2, 2, 2, -48, -48, -48));

    SimilarityConfig ssim_cfg;
    ssim_cfg.terms = {{SimilarityTerm::Ssim, 1.0}};
    const KeypointSet centers = KeypointSet::with_unit_confidence(
        {spec.shapes[0].center, spec.shapes[1].center, spec.shapes[2].center,
         spec.shapes[3].center, spec.shapes[4].center, spec.shapes[5].center});
    CHECK(eval_objective(vol, vol, centers, centers, ssim_cfg) == Catch::Approx(1.0).margin(1e-6));

    SimilarityConfig mse_cfg;
    mse_cfg.terms = {{SimilarityTerm::Mse, 1.0}};
    CHECK(eval_objective(vol, vol, centers, centers, mse_cfg) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("ground-truth keypoints beat 100 perturbations of 1mm or more") {
    const GroundTruth gt = translated_pair();
    SimilarityConfig cfg;
    cfg.terms = {{SimilarityTerm::Mse, 1.0}};
    const double truth = eval_objective(gt.moving, gt.fixed, gt.true_moving, gt.true_fixed, cfg);
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> magnitude(1.0, 10.0);
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const double m = magnitude(rng);
        const double perturbed_value =
            eval_objective(gt.moving, gt.fixed, perturbed(gt.true_moving, m, trial),
                           perturbed(gt.true_fixed, m, trial + 5000), cfg);
        CHECK(truth > perturbed_value);
    }
}

TEST_CASE("objective is invariant to uniform confidence scaling") {
    const GroundTruth gt = translated_pair();
    SimilarityConfig cfg;
    cfg.terms = {{SimilarityTerm::Mse, 1.0}};
    std::vector<double> scaled(gt.true_moving.size(), 17.0);
    const KeypointSet km_scaled(gt.true_moving.points(), scaled);
    const double a = eval_objective(gt.moving, gt.fixed, gt.true_moving, gt.true_fixed, cfg);
    const double b = eval_objective(gt.moving, gt.fixed, km_scaled, gt.true_fixed, cfg);
    CHECK(a == Catch::Approx(b).margin(1e-12));
}

TEST_CASE("dice term requires labels") {
    const PhantomSpec spec = rkm_tests::sphere_phantom();
    Volume vol = render(spec, {32, 32, 32}, WorldAffine::scaling(3, 3, 3, -48, -48, -48));
    Volume unlabeled = vol;
    unlabeled.labels.clear();
    SimilarityConfig cfg;
    cfg.terms = {{SimilarityTerm::Dice, 1.0}};
    const KeypointSet centers = KeypointSet::with_unit_confidence(
        {spec.shapes[0].center, spec.shapes[1].center, spec.shapes[2].center,
         spec.shapes[3].center});
    CHECK_THROWS_AS(eval_objective(unlabeled, vol, centers, centers, cfg), MissingLabels);
}

TEST_CASE("lambda range must be resolved for eval, sampled for refine") {
    SimilarityConfig cfg;
    cfg.terms = {{SimilarityTerm::Mse, 1.0}};
    cfg.tps_lambda_range = {{0.01, 10.0}};
    cfg.validate();

    const PhantomSpec spec = rkm_tests::sphere_phantom();
    const Volume vol = render(spec, {24, 24, 24}, WorldAffine::scaling(4, 4, 4, -48, -48, -48));
    const KeypointSet centers = KeypointSet::with_unit_confidence(
        {spec.shapes[0].center, spec.shapes[1].center, spec.shapes[2].center,
         spec.shapes[3].center, spec.shapes[4].center});
    CHECK_THROWS_AS(eval_objective(vol, vol, centers, centers, cfg), Error);

    const double l1 = sample_lambda_log_uniform(*cfg.tps_lambda_range, 7);
    const double l2 = sample_lambda_log_uniform(*cfg.tps_lambda_range, 7);
    const double l3 = sample_lambda_log_uniform(*cfg.tps_lambda_range, 8);
    CHECK(l1 == l2);
    CHECK(l1 != l3);
    CHECK((l1 >= 0.01 && l1 <= 10.0));

    SimilarityConfig bad = cfg;
    bad.tps_lambda_range = {{0.0001, 10.0}};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("refinement at the optimum accepts no steps") {
    const PhantomSpec spec = rkm_tests::sphere_phantom();
    const GroundTruth gt =
        make_pair(spec, WorldTransform::identity(), {3, 3, 3}, {3, 3, 3});
    SimilarityConfig scfg;
    scfg.terms = {{SimilarityTerm::Mse, 1.0}};
    RefinementConfig rcfg;
    rcfg.max_iters = 6;
    rcfg.step_mm = 2.0;
    const RefinementResult res =
        refine_keypoints(gt.moving, gt.fixed, gt.true_moving, gt.true_fixed, scfg, rcfg);
    CHECK(res.accepted_steps == 0);
    for (std::size_t i = 0; i < res.moving.size(); ++i) {
        CHECK(res.moving.point(i).x == gt.true_moving.point(i).x);
        CHECK(res.fixed.point(i).x == gt.true_fixed.point(i).x);
    }
}

TEST_CASE("refinement recovers a 3mm perturbation to within 2mm transfer error") {
    const GroundTruth gt = translated_pair();
    SimilarityConfig scfg;
    scfg.terms = {{SimilarityTerm::Mse, 1.0}};
    RefinementConfig rcfg;
    rcfg.max_iters = 60;
    rcfg.step_mm = 2.0;
    rcfg.tol = 1e-7;
    rcfg.rng_seed = 5;

    const KeypointSet km0 = perturbed(gt.true_moving, 3.0, 11);
    const KeypointSet kf0 = perturbed(gt.true_fixed, 3.0, 12);
    const RefinementResult res = refine_keypoints(gt.moving, gt.fixed, km0, kf0, scfg, rcfg);

    // trace is non-decreasing and the result is at least as good as the start
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] >= res.trace[i - 1]);
    CHECK(res.objective >= res.trace.front());

    const AffineTransform solved = solve_affine_weighted(res.moving, res.fixed);
    CHECK(mean_transfer_error(solved, gt.true_moving, gt.true_fixed) <= 2.0);
}

TEST_CASE("refinement is deterministic given the seed") {
    const GroundTruth gt = translated_pair();
    SimilarityConfig scfg;
    scfg.terms = {{SimilarityTerm::Mse, 1.0}};
    RefinementConfig rcfg;
    rcfg.max_iters = 8;
    rcfg.step_mm = 1.5;
    rcfg.rng_seed = 21;

    const KeypointSet km0 = perturbed(gt.true_moving, 2.0, 31);
    const KeypointSet kf0 = perturbed(gt.true_fixed, 2.0, 32);
    const RefinementResult a = refine_keypoints(gt.moving, gt.fixed, km0, kf0, scfg, rcfg);
    const RefinementResult b = refine_keypoints(gt.moving, gt.fixed, km0, kf0, scfg, rcfg);
    CHECK(a.objective == b.objective);
    CHECK(a.accepted_steps == b.accepted_steps);
    for (std::size_t i = 0; i < a.moving.size(); ++i) {
        CHECK(a.moving.point(i).x == b.moving.point(i).x);
        CHECK(a.moving.point(i).y == b.moving.point(i).y);
        CHECK(a.moving.point(i).z == b.moving.point(i).z);
    }
}
