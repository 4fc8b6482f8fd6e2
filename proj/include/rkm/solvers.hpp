#ifndef RKM_SOLVERS_HPP
#define RKM_SOLVERS_HPP

// Closed-form transform fits over corresponding keypoints in world
// coordinates: a confidence-weighted affine solve, its rigid
// (polar-orthogonalized) variant, and a regularized thin-plate-spline fit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"

namespace rkm {

/// Relative smallest-singular-value threshold below which a fit system is
/// reported as degenerate instead of solved.
inline constexpr double kRankTolerance = 1e-10;

/// N world-millimeter landmarks with positive per-point confidences.
/// Construction checks finiteness and positivity; the N >= 4 requirement of
/// the transform solvers is enforced at their entry (single-point sets are
/// legitimate detector outputs).
class KeypointSet {
  public:
    KeypointSet(std::vector<WorldPoint> points, std::vector<double> confidences)
        : points_(std::move(points)), confidences_(std::move(confidences)) {
        if (points_.empty()) throw Error("keypoint set must not be empty");
        if (points_.size() != confidences_.size())
            throw Error("keypoint/confidence count mismatch");
        for (const auto& p : points_)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                throw Error("keypoints must be finite");
        for (double c : confidences_)
            if (!(c > 0.0) || !std::isfinite(c)) throw Error("confidences must be positive finite");
    }

    /// All confidences one.
    static KeypointSet with_unit_confidence(std::vector<WorldPoint> points) {
        std::vector<double> conf(points.size(), 1.0);
        return KeypointSet(std::move(points), std::move(conf));
    }

    std::size_t size() const { return points_.size(); }
    const WorldPoint& point(std::size_t i) const { return points_[i]; }
    double confidence(std::size_t i) const { return confidences_[i]; }
    const std::vector<WorldPoint>& points() const { return points_; }
    const std::vector<double>& confidences() const { return confidences_; }

  private:
    std::vector<WorldPoint> points_;
    std::vector<double> confidences_;
};

/// 4x4 homogeneous world->world map, last row (0,0,0,1). Unlike WorldAffine
/// it carries no invertibility guarantee.
struct AffineTransform {
    Mat4 matrix = Mat4::identity();

    explicit AffineTransform(const Mat4& m) : matrix(m) {
        if (!mat4_last_row_pinned(matrix)) throw Error("transform last row must be (0,0,0,1)");
        for (double v : matrix.m)
            if (!std::isfinite(v)) throw Error("transform entries must be finite");
    }
    AffineTransform() = default;

    static AffineTransform identity() { return AffineTransform(); }
};

inline WorldPoint apply(const AffineTransform& t, const WorldPoint& p) {
    return mat4_apply(t.matrix, p);
}

/// Thin-plate-spline world->world map: an affine part plus radial warps
/// anchored at the control points, with kernel U(r) = r.
///
///   f(p) = affine_part * p + sum_i w_i * ||p - c_i||
///
/// The coefficients satisfy the side conditions sum_i w_i = 0 and
/// sum_i w_i * c_i = 0 per output axis, which pins the far-field behavior to
/// the affine part. lambda records the rigidity weight the fit used.
struct TpsTransform {
    std::vector<WorldPoint> control_points;
    Mat4 affine_part = Mat4::identity();
    std::vector<std::array<double, 3>> warp_coefficients;
    double lambda = 0.0;
};

namespace detail {

inline void require_pair(const KeypointSet& moving, const KeypointSet& fixed,
                         const std::string& who) {
    if (moving.size() != fixed.size())
        throw Error(who + ": moving and fixed keypoint counts differ");
    if (moving.size() < 4) throw Error(who + ": needs at least 4 keypoint pairs");
}

/// Per-pair weights c_i^m * c_i^f.
inline std::vector<double> pair_weights(const KeypointSet& moving, const KeypointSet& fixed) {
    std::vector<double> w(moving.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = moving.confidence(i) * fixed.confidence(i);
    return w;
}

}  // namespace detail

/// Solves min over affine T of sum_i c_i^m c_i^f ||k_i^f - T k_i^m||^2 with
/// homogeneously embedded keypoints, i.e. the closed form
/// K^f C (K^m)^T (K^m C (K^m)^T)^-1 evaluated through a rank-revealing
/// factorization of the weighted stack. Returns the moving->fixed map.
///
/// Throws DegenerateConfiguration when the moving points are coplanar or
/// coincident (relative smallest singular value <= 1e-10).
inline AffineTransform solve_affine_weighted(const KeypointSet& moving, const KeypointSet& fixed) {
    detail::require_pair(moving, fixed, "solve_affine_weighted");
    const auto n = static_cast<Eigen::Index>(moving.size());
    const std::vector<double> w = detail::pair_weights(moving, fixed);

    Eigen::MatrixXd x(n, 4), y(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = std::sqrt(w[static_cast<std::size_t>(i)]);
        const WorldPoint& pm = moving.point(static_cast<std::size_t>(i));
        const WorldPoint& pf = fixed.point(static_cast<std::size_t>(i));
        x.row(i) << s * pm.x, s * pm.y, s * pm.z, s;
        y.row(i) << s * pf.x, s * pf.y, s * pf.z, s;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(3) <= kRankTolerance * sv(0))
        throw DegenerateConfiguration(
            "solve_affine_weighted: keypoint configuration is rank-deficient (coplanar or "
            "coincident moving points)");

    // x * T^T ~= y column-wise; columns of T^T are the rows of T.
    const Eigen::MatrixXd t_transposed = svd.solve(y);
    Mat4 m = Mat4::identity();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) m.at(r, c) = t_transposed(c, r);
    return AffineTransform(m);
}

/// Rigid variant: the affine solution's linear block is orthogonalized by
/// polar decomposition (proper rotation enforced), and the translation is
/// re-fit as the weighted centroid residual. Returns the moving->fixed map.
inline AffineTransform solve_rigid_weighted(const KeypointSet& moving, const KeypointSet& fixed) {
    const AffineTransform affine = solve_affine_weighted(moving, fixed);
    Eigen::Matrix3d l;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) l(r, c) = affine.matrix.at(r, c);

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(l, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
    if (rot.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        rot = svd.matrixU() * flip * svd.matrixV().transpose();
    }

    const std::vector<double> w = detail::pair_weights(moving, fixed);
    double wsum = 0.0;
    Eigen::Vector3d cm = Eigen::Vector3d::Zero(), cf = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < moving.size(); ++i) {
        const WorldPoint& pm = moving.point(i);
        const WorldPoint& pf = fixed.point(i);
        cm += w[i] * Eigen::Vector3d(pm.x, pm.y, pm.z);
        cf += w[i] * Eigen::Vector3d(pf.x, pf.y, pf.z);
        wsum += w[i];
    }
    cm /= wsum;
    cf /= wsum;
    const Eigen::Vector3d t = cf - rot * cm;

    Mat4 m = Mat4::identity();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m.at(r, c) = rot(r, c);
        m.at(r, 3) = t(r);
    }
    return AffineTransform(m);
}

/// Fits a TPS mapping the moving keypoints toward the fixed ones.
///
/// lambda = 0 interpolates the correspondences exactly; growing lambda trades
/// keypoint fidelity for lower bending energy and approaches the weighted
/// affine fit. Confidence products enter as per-point slack: the ridge term
/// is lambda * diag(1 / (c_i^m c_i^f)), so high-confidence pairs are matched
/// more tightly (use_confidence_weights = false gives the classic unweighted
/// spline).
///
/// Internally the system is assembled with the conditionally positive
/// definite kernel -r (the 3-D biharmonic convention, under which the bending
/// energy is the nonnegative form w~^T K~ w~); the returned coefficients are
/// negated so that evaluation uses U(r) = r as stated above.
inline TpsTransform solve_tps(const KeypointSet& moving, const KeypointSet& fixed, double lambda,
                              bool use_confidence_weights = true) {
    detail::require_pair(moving, fixed, "solve_tps");
    if (!(lambda >= 0.0)) throw Error("solve_tps: lambda must be >= 0");
    const auto n = static_cast<Eigen::Index>(moving.size());

    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = a + 1; b < n; ++b) {
            const double d = distance(moving.point(static_cast<std::size_t>(a)),
                                      moving.point(static_cast<std::size_t>(b)));
            if (d <= 1e-9)
                throw DegenerateConfiguration("solve_tps: control points " + std::to_string(a) +
                                              " and " + std::to_string(b) +
                                              " coincide (pairwise distance <= 1e-9 mm)");
        }

    std::vector<double> w(moving.size(), 1.0);
    if (use_confidence_weights) w = detail::pair_weights(moving, fixed);

    // [ K~ + lambda*diag(1/w)   P ] [ w~ ]   [ y ]
    // [ P^T                     0 ] [ a  ] = [ 0 ],  K~_ij = -r_ij
    //
    // For lambda > 1 the ridge dwarfs the polynomial rows and the raw system
    // turns ill-conditioned, so it is assembled in the rescaled variable
    // v = lambda * w~, whose system [K~/lambda + diag(1/w), P; P^T, 0] tends
    // to a well-conditioned limit as lambda grows.
    const bool rescaled = lambda > 1.0;
    const double kscale = rescaled ? 1.0 / lambda : 1.0;
    const Eigen::Index dim = n + 4;
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, 3);
    for (Eigen::Index a = 0; a < n; ++a) {
        const WorldPoint& pa = moving.point(static_cast<std::size_t>(a));
        for (Eigen::Index b = 0; b < n; ++b) {
            if (a == b) continue;
            sys(a, b) = -kscale * distance(pa, moving.point(static_cast<std::size_t>(b)));
        }
        sys(a, a) = (rescaled ? 1.0 : lambda) / w[static_cast<std::size_t>(a)];
        sys(a, n + 0) = 1.0;
        sys(a, n + 1) = pa.x;
        sys(a, n + 2) = pa.y;
        sys(a, n + 3) = pa.z;
        sys(n + 0, a) = 1.0;
        sys(n + 1, a) = pa.x;
        sys(n + 2, a) = pa.y;
        sys(n + 3, a) = pa.z;
        const WorldPoint& pf = fixed.point(static_cast<std::size_t>(a));
        rhs(a, 0) = pf.x;
        rhs(a, 1) = pf.y;
        rhs(a, 2) = pf.z;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(dim - 1) <= kRankTolerance * sv(0))
        throw DegenerateConfiguration("solve_tps: interpolation system is numerically singular");
    const Eigen::MatrixXd sol = svd.solve(rhs);

    TpsTransform t;
    t.control_points = moving.points();
    t.lambda = lambda;
    t.warp_coefficients.resize(moving.size());
    const double unscale = rescaled ? 1.0 / lambda : 1.0;
    for (Eigen::Index i = 0; i < n; ++i)
        t.warp_coefficients[static_cast<std::size_t>(i)] = {
            -unscale * sol(i, 0), -unscale * sol(i, 1), -unscale * sol(i, 2)};
    for (int axis = 0; axis < 3; ++axis) {
        t.affine_part.at(axis, 3) = sol(n + 0, axis);
        t.affine_part.at(axis, 0) = sol(n + 1, axis);
        t.affine_part.at(axis, 1) = sol(n + 2, axis);
        t.affine_part.at(axis, 2) = sol(n + 3, axis);
    }
    return t;
}

/// f(p) = affine_part * p + sum_i w_i * ||p - c_i||.
inline WorldPoint eval_tps(const TpsTransform& t, const WorldPoint& p) {
    WorldPoint out = mat4_apply(t.affine_part, p);
    for (std::size_t i = 0; i < t.control_points.size(); ++i) {
        const double r = distance(p, t.control_points[i]);
        const auto& w = t.warp_coefficients[i];
        out.x += w[0] * r;
        out.y += w[1] * r;
        out.z += w[2] * r;
    }
    return out;
}

/// Bending energy of the warp, summed over output axes: the quadratic form of
/// the warp coefficients with the biharmonic kernel matrix over the control
/// points. Zero exactly when the map is affine; clamped at zero against
/// roundoff (with U(r) = r the raw form is the negated energy).
inline double tps_bending_energy(const TpsTransform& t) {
    const std::size_t n = t.control_points.size();
    double energy = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            const double r = distance(t.control_points[a], t.control_points[b]);
            const auto& wa = t.warp_coefficients[a];
            const auto& wb = t.warp_coefficients[b];
            energy -= (wa[0] * wb[0] + wa[1] * wb[1] + wa[2] * wb[2]) * r;
        }
    return std::max(0.0, energy);
}

}  // namespace rkm

#endif
