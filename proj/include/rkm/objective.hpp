#ifndef RKM_OBJECTIVE_HPP
#define RKM_OBJECTIVE_HPP

// Pairwise similarity objective for a keypoint solution, and a desk-scale
// derivative-free refinement of keypoint positions against it. Convention:
// higher is better; MSE enters negated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rkm/errors.hpp"
#include "rkm/metrics.hpp"
#include "rkm/rng.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"
#include "rkm/warp.hpp"

namespace rkm {

enum class SimilarityTerm { Mse, Ssim, Dice };

/// Weighted similarity terms plus the transform family: affine when no
/// lambda is configured, TPS at the fixed lambda otherwise. A lambda range
/// is sampled log-uniformly by refine_keypoints (seeded); eval_objective
/// needs a resolved value.
struct SimilarityConfig {
    std::vector<std::pair<SimilarityTerm, double>> terms = {{SimilarityTerm::Mse, 1.0}};
    std::optional<double> tps_lambda;
    std::optional<std::pair<double, double>> tps_lambda_range;  // within [0.001, 100]

    void validate() const {
        if (terms.empty()) throw Error("similarity: at least one term required");
        for (const auto& [_, w] : terms)
            if (!(w > 0.0)) throw Error("similarity: term weights must be positive");
        if (tps_lambda && !(*tps_lambda >= 0.0)) throw Error("similarity: lambda must be >= 0");
        if (tps_lambda_range) {
            const auto& [lo, hi] = *tps_lambda_range;
            if (!(lo >= 0.001 && hi <= 100.0 && lo < hi))
                throw Error("similarity: lambda range must lie within [0.001, 100]");
        }
    }
};

struct RefinementConfig {
    int max_iters = 100;
    double step_mm = 2.0;
    double tol = 1e-6;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (max_iters < 1 || !(step_mm > 0.0) || !(tol > 0.0))
            throw Error("refinement: max_iters, step_mm and tol must be positive");
    }
};

/// Log-uniform draw from [lo, hi], from a splitmix-hashed seed.
inline double sample_lambda_log_uniform(std::pair<double, double> range, std::uint64_t seed) {
    const std::uint64_t h = rkm::detail::splitmix64(seed ^ 0x9a3cull);
    const double u = static_cast<double>(h >> 11) / 9007199254740992.0;
    return std::exp(std::log(range.first) + u * (std::log(range.second) - std::log(range.first)));
}

namespace detail {

inline std::vector<int> nonzero_labels(const Volume& v) {
    std::vector<int> seen(v.labels.begin(), v.labels.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    seen.erase(std::remove(seen.begin(), seen.end(), 0), seen.end());
    return seen;
}

}  // namespace detail

/// Solves the configured transform from the keypoint pair, warps the moving
/// image onto the fixed grid, and returns the weighted similarity sum.
///
/// The Dice term is soft: one-hot moving label masks are warped with
/// trilinear interpolation, so the score responds smoothly to sub-voxel
/// keypoint moves. Requires labels on both volumes when Dice is configured.
inline double eval_objective(const Volume& moving, const Volume& fixed, const KeypointSet& km,
                             const KeypointSet& kf, const SimilarityConfig& cfg) {
    cfg.validate();
    if (cfg.tps_lambda_range && !cfg.tps_lambda)
        throw Error("eval_objective: lambda range must be resolved to a value first");

    WorldTransform t = cfg.tps_lambda
                           ? WorldTransform::from_pullback_tps(solve_tps(kf, km, *cfg.tps_lambda))
                           : WorldTransform::from_moving_to_fixed_affine(
                                 solve_affine_weighted(km, kf));
    const Volume warped = warp_to_fixed_grid(moving, fixed, t);

    bool wants_dice = false;
    for (const auto& [term, _] : cfg.terms) wants_dice = wants_dice || term == SimilarityTerm::Dice;
    if (wants_dice && (!moving.has_labels() || !fixed.has_labels()))
        throw MissingLabels("eval_objective: dice term requires label grids on both volumes");

    double value = 0.0;
    for (const auto& [term, weight] : cfg.terms) {
        switch (term) {
            case SimilarityTerm::Mse:
                value += weight * -mse(warped, fixed);
                break;
            case SimilarityTerm::Ssim:
                value += weight * ssim(warped, fixed, joint_dynamic_range(moving, fixed));
                break;
            case SimilarityTerm::Dice: {
                const std::vector<int> labels = detail::nonzero_labels(fixed);
                if (labels.empty())
                    throw MissingLabels("eval_objective: fixed volume has no nonzero labels");
                double acc = 0.0;
                for (int label : labels) {
                    std::vector<float> onehot(moving.voxel_count());
                    for (std::size_t i = 0; i < onehot.size(); ++i)
                        onehot[i] = moving.labels[i] == label ? 1.0f : 0.0f;
                    Volume mask(moving.dims, moving.affine);
                    mask.data = std::move(onehot);
                    const Volume soft = warp_to_fixed_grid(mask, fixed, t);
                    std::vector<float> target(fixed.voxel_count());
                    for (std::size_t i = 0; i < target.size(); ++i)
                        target[i] = fixed.labels[i] == label ? 1.0f : 0.0f;
                    acc += soft_dice_grids(soft.data, target);
                }
                value += weight * acc / static_cast<double>(labels.size());
                break;
            }
        }
    }
    return value;
}

struct RefinementResult {
    KeypointSet moving;
    KeypointSet fixed;
    double objective = 0.0;
    std::vector<double> trace;  // objective after each accepted step, starting value first
    int accepted_steps = 0;
};

/// Coordinate-wise pattern search over the keypoint world coordinates of
/// both sets, confidences fixed.
///
/// Each round evaluates every single-coordinate +/- step candidate and takes
/// the best strict improvement, with deterministic tie-breaking (moving set
/// before fixed, lowest keypoint index, axis order, negative direction
/// first). When no candidate improves, the step halves. Terminates at
/// max_iters rounds, when an accepted improvement falls below tol, or when
/// the step shrinks below 1e-6 mm. With a configured lambda range, one
/// lambda is drawn per run from rng_seed; everything else is deterministic.
inline RefinementResult refine_keypoints(const Volume& moving, const Volume& fixed,
                                         const KeypointSet& init_km, const KeypointSet& init_kf,
                                         const SimilarityConfig& scfg_in,
                                         const RefinementConfig& rcfg) {
    rcfg.validate();
    SimilarityConfig scfg = scfg_in;
    scfg.validate();
    if (scfg.tps_lambda_range && !scfg.tps_lambda)
        scfg.tps_lambda = sample_lambda_log_uniform(*scfg.tps_lambda_range, rcfg.rng_seed);

    std::vector<WorldPoint> km = init_km.points(), kf = init_kf.points();
    const std::vector<double> cm = init_km.confidences(), cf = init_kf.confidences();
    auto objective_of = [&](const std::vector<WorldPoint>& pm, const std::vector<WorldPoint>& pf) {
        return eval_objective(moving, fixed, KeypointSet(pm, cm), KeypointSet(pf, cf), scfg);
    };

    double best = objective_of(km, kf);
    RefinementResult result{init_km, init_kf, best, {best}, 0};
    double step = rcfg.step_mm;

    for (int iter = 0; iter < rcfg.max_iters; ++iter) {
        double cand_best = best;
        int cand_index = -1;  // enumeration index of the winning candidate
        int index = 0;
        std::vector<WorldPoint> cand_km, cand_kf;
        for (int set = 0; set < 2; ++set) {
            std::vector<WorldPoint>& pts = set == 0 ? km : kf;
            for (std::size_t p = 0; p < pts.size(); ++p)
                for (int axis = 0; axis < 3; ++axis)
                    for (double dir : {-1.0, 1.0}) {
                        std::vector<WorldPoint> trial_km = km, trial_kf = kf;
                        std::vector<WorldPoint>& trial = set == 0 ? trial_km : trial_kf;
                        double* coord = axis == 0   ? &trial[p].x
                                        : axis == 1 ? &trial[p].y
                                                    : &trial[p].z;
                        *coord += dir * step;
                        const double value = objective_of(trial_km, trial_kf);
                        // strict > keeps the earliest (highest-priority)
                        // candidate on ties
                        if (value > cand_best) {
                            cand_best = value;
                            cand_index = index;
                            cand_km = std::move(trial_km);
                            cand_kf = std::move(trial_kf);
                        }
                        ++index;
                    }
        }

        if (cand_index >= 0) {
            const double improvement = cand_best - best;
            km = std::move(cand_km);
            kf = std::move(cand_kf);
            best = cand_best;
            result.trace.push_back(best);
            ++result.accepted_steps;
            if (improvement < rcfg.tol) break;
        } else {
            step *= 0.5;
            if (step < 1e-6) break;
        }
    }

    result.moving = KeypointSet(km, cm);
    result.fixed = KeypointSet(kf, cf);
    result.objective = best;
    return result;
}

}  // namespace rkm

#endif
