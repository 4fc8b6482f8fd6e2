#ifndef RKM_WARP_HPP
#define RKM_WARP_HPP

// Resampling-free warping: evaluates the world-space map over the fixed
// image's voxel grid and samples the moving image exactly once per output
// voxel. No intermediate grid is ever materialized.

#include <array>
#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/parallel.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"

namespace rkm {

enum class InterpolationMode { Trilinear, Nearest };

/// A registration result ready for warping.
///
/// Sampling pulls values back from the moving image, so the map applied per
/// fixed voxel runs fixed-world -> moving-world. The keypoint solvers return
/// moving->fixed maps; wrapping such a solution here inverts the affine (and
/// rigid) case internally. TPS has no closed-form inverse, so a TPS intended
/// for warping must be solved in the pull-back direction to begin with
/// (swap the argument roles of solve_tps); the forward direction is then
/// recovered iteratively when asked for.
class WorldTransform {
  public:
    enum class Kind { Affine, Rigid, Tps };

    /// Wraps a moving->fixed affine solution (solve_affine_weighted output).
    static WorldTransform from_moving_to_fixed_affine(const AffineTransform& t) {
        return WorldTransform(Kind::Affine, t.matrix, mat4_invert_affine(t.matrix));
    }

    /// Wraps a moving->fixed rigid solution (solve_rigid_weighted output).
    static WorldTransform from_moving_to_fixed_rigid(const AffineTransform& t) {
        return WorldTransform(Kind::Rigid, t.matrix, mat4_invert_affine(t.matrix));
    }

    /// Wraps an affine given directly in the pull-back (fixed->moving)
    /// direction, e.g. for synthetic fields.
    static WorldTransform from_pullback_affine(const AffineTransform& t) {
        return WorldTransform(Kind::Affine, mat4_invert_affine(t.matrix), t.matrix);
    }

    /// Wraps a TPS solved in the pull-back direction: solve_tps(fixed_kps,
    /// moving_kps, lambda).
    static WorldTransform from_pullback_tps(const TpsTransform& t) {
        WorldTransform w(Kind::Tps, Mat4::identity(), Mat4::identity());
        w.tps_ = t;
        return w;
    }

    static WorldTransform identity() {
        return from_moving_to_fixed_affine(AffineTransform::identity());
    }

    Kind kind() const { return kind_; }

    /// The map evaluated per fixed voxel during warping: fixed-world ->
    /// moving-world.
    WorldPoint pullback(const WorldPoint& fixed_world) const {
        if (kind_ == Kind::Tps) return eval_tps(tps_, fixed_world);
        return mat4_apply(pullback_, fixed_world);
    }

    /// moving-world -> fixed-world. Closed form for affine/rigid; for TPS the
    /// pull-back map is inverted by damped fixed-point iteration, which
    /// converges for the mild, invertible deformations this toolkit targets.
    WorldPoint forward(const WorldPoint& moving_world) const {
        if (kind_ != Kind::Tps) return mat4_apply(forward_, moving_world);
        WorldPoint x = moving_world;
        for (int it = 0; it < 200; ++it) {
            const WorldPoint r = pullback(x) - moving_world;
            if (norm(r) < 1e-12) break;
            x = x - r;
        }
        return x;
    }

    /// The moving->fixed 4x4 for affine/rigid solutions (what register emits).
    const Mat4& solution_matrix() const {
        if (kind_ == Kind::Tps) throw Error("TPS transform has no 4x4 solution matrix");
        return forward_;
    }

    const TpsTransform& tps() const {
        if (kind_ != Kind::Tps) throw Error("not a TPS transform");
        return tps_;
    }

  private:
    WorldTransform(Kind k, const Mat4& fwd, const Mat4& pull)
        : kind_(k), forward_(fwd), pullback_(pull) {}

    Kind kind_;
    Mat4 forward_;   // moving -> fixed (affine/rigid)
    Mat4 pullback_;  // fixed -> moving (affine/rigid)
    TpsTransform tps_;
};

namespace detail {

/// Trilinear sample with zero fill outside the grid. Voxel centers sit at
/// integer indices.
inline float sample_trilinear(const Volume& vol, double x, double y, double z) {
    const double fi = std::floor(x), fj = std::floor(y), fk = std::floor(z);
    const int i0 = static_cast<int>(fi), j0 = static_cast<int>(fj), k0 = static_cast<int>(fk);
    const double fx = x - fi, fy = y - fj, fz = z - fk;
    auto fetch = [&vol](int i, int j, int k) -> double {
        return vol.in_bounds(i, j, k) ? static_cast<double>(vol.at(i, j, k)) : 0.0;
    };
    const double c00 = (1.0 - fx) * fetch(i0, j0, k0) + fx * fetch(i0 + 1, j0, k0);
    const double c10 = (1.0 - fx) * fetch(i0, j0 + 1, k0) + fx * fetch(i0 + 1, j0 + 1, k0);
    const double c01 = (1.0 - fx) * fetch(i0, j0, k0 + 1) + fx * fetch(i0 + 1, j0, k0 + 1);
    const double c11 = (1.0 - fx) * fetch(i0, j0 + 1, k0 + 1) + fx * fetch(i0 + 1, j0 + 1, k0 + 1);
    const double c0 = (1.0 - fy) * c00 + fy * c10;
    const double c1 = (1.0 - fy) * c01 + fy * c11;
    return static_cast<float>((1.0 - fz) * c0 + fz * c1);
}

/// Nearest-neighbor label sample, 0 outside the grid. Ties round toward +inf.
inline std::int32_t sample_nearest_label(const Volume& vol, double x, double y, double z) {
    const int i = static_cast<int>(std::floor(x + 0.5));
    const int j = static_cast<int>(std::floor(y + 0.5));
    const int k = static_cast<int>(std::floor(z + 0.5));
    return vol.in_bounds(i, j, k) ? vol.label_at(i, j, k) : 0;
}

inline float sample_nearest(const Volume& vol, double x, double y, double z) {
    const int i = static_cast<int>(std::floor(x + 0.5));
    const int j = static_cast<int>(std::floor(y + 0.5));
    const int k = static_cast<int>(std::floor(z + 0.5));
    return vol.in_bounds(i, j, k) ? vol.at(i, j, k) : 0.0f;
}

}  // namespace detail

/// Warps the moving image onto the fixed image's grid through a single
/// interpolation: for each fixed voxel x,
///
///   value = sample(moving, world_to_voxel(A_m, t.pullback(voxel_to_world(A_f, x))))
///
/// Intensities use `mode` (trilinear by default); the label channel, when
/// present, always uses nearest-neighbor. Out-of-bounds samples fill with 0.
/// The output carries the fixed grid's dims and affine. Parallelized over
/// output slabs; voxels are independent, so results are identical for any
/// thread count.
inline Volume warp_to_fixed_grid(const Volume& moving, const Volume& fixed_grid,
                                 const WorldTransform& t,
                                 InterpolationMode mode = InterpolationMode::Trilinear) {
    moving.check();
    fixed_grid.check();
    Volume out(fixed_grid.dims, fixed_grid.affine);
    if (moving.has_labels()) out.labels.assign(out.voxel_count(), 0);

    const Mat4& a_f = fixed_grid.affine.matrix();
    const Mat4 a_m_inv = mat4_invert_affine(moving.affine.matrix());
    const bool warp_labels = moving.has_labels();

    parallel_for(static_cast<std::int64_t>(fixed_grid.dims[2]), [&](std::int64_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < fixed_grid.dims[1]; ++j)
            for (int i = 0; i < fixed_grid.dims[0]; ++i) {
                const WorldPoint pf = mat4_apply(a_f, static_cast<double>(i),
                                                 static_cast<double>(j), static_cast<double>(k));
                const WorldPoint pm = t.pullback(pf);
                const WorldPoint v = mat4_apply(a_m_inv, pm);
                const std::size_t idx = out.index(i, j, k);
                out.data[idx] = mode == InterpolationMode::Trilinear
                                    ? detail::sample_trilinear(moving, v.x, v.y, v.z)
                                    : detail::sample_nearest(moving, v.x, v.y, v.z);
                if (warp_labels) out.labels[idx] = detail::sample_nearest_label(moving, v.x, v.y, v.z);
            }
    });
    return out;
}

/// Dense diagnostic field over the fixed grid: per voxel the world-space
/// displacement of the effective sampling map, t.pullback(p) - p, in mm.
struct DisplacementField {
    std::array<int, 3> dims{0, 0, 0};
    WorldAffine affine;
    std::vector<std::array<float, 3>> vectors;
};

inline DisplacementField displacement_field(const Volume& fixed_grid, const WorldTransform& t) {
    fixed_grid.check();
    DisplacementField field;
    field.dims = fixed_grid.dims;
    field.affine = fixed_grid.affine;
    field.vectors.assign(fixed_grid.voxel_count(), {0.0f, 0.0f, 0.0f});
    const Mat4& a_f = fixed_grid.affine.matrix();

    parallel_for(static_cast<std::int64_t>(fixed_grid.dims[2]), [&](std::int64_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < fixed_grid.dims[1]; ++j)
            for (int i = 0; i < fixed_grid.dims[0]; ++i) {
                const WorldPoint p = mat4_apply(a_f, static_cast<double>(i),
                                                static_cast<double>(j), static_cast<double>(k));
                const WorldPoint d = t.pullback(p) - p;
                field.vectors[fixed_grid.index(i, j, k)] = {static_cast<float>(d.x),
                                                            static_cast<float>(d.y),
                                                            static_cast<float>(d.z)};
            }
    });
    return field;
}

}  // namespace rkm

#endif
