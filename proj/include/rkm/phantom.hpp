#ifndef RKM_PHANTOM_HPP
#define RKM_PHANTOM_HPP

// Synthetic ground truth: parametric ellipsoid anatomies rendered at
// arbitrary spacings/orientations with a known world transform. Analytic
// membership tests make every downstream number derivable without reference
// data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/parallel.hpp"
#include "rkm/rng.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"
#include "rkm/warp.hpp"

namespace rkm {

struct EllipsoidSpec {
    WorldPoint center;             // mm
    std::array<double, 3> radii;   // mm, > 0
    float intensity = 1.0f;
    int label = 1;
};

/// A parametric anatomy: ellipsoids plus optional additive Gaussian
/// intensity noise, seeded for reproducibility.
struct PhantomSpec {
    std::vector<EllipsoidSpec> shapes;
    double noise_sigma = 0.0;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (shapes.empty()) throw Error("phantom: needs at least one shape");
        std::vector<int> labels;
        for (const auto& s : shapes) {
            if (!(s.radii[0] > 0.0 && s.radii[1] > 0.0 && s.radii[2] > 0.0))
                throw Error("phantom: radii must be positive");
            labels.push_back(s.label);
        }
        std::sort(labels.begin(), labels.end());
        if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
            throw Error("phantom: shape labels must be unique");
        if (noise_sigma < 0.0) throw Error("phantom: noise sigma must be >= 0");
    }

    /// Line-oriented text form:
    ///   ellipsoid cx cy cz rx ry rz intensity label
    ///   noise <sigma>
    ///   seed <n>
    /// Blank lines and lines starting with '#' are ignored.
    static PhantomSpec parse(const std::string& text) {
        PhantomSpec spec;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::istringstream ls(line);
            std::string word;
            if (!(ls >> word) || word[0] == '#') continue;
            if (word == "ellipsoid") {
                EllipsoidSpec e;
                if (!(ls >> e.center.x >> e.center.y >> e.center.z >> e.radii[0] >> e.radii[1] >>
                      e.radii[2] >> e.intensity >> e.label))
                    throw ParseError(lineno, 1,
                                     "expected `ellipsoid cx cy cz rx ry rz intensity label`");
                spec.shapes.push_back(e);
            } else if (word == "noise") {
                if (!(ls >> spec.noise_sigma)) throw ParseError(lineno, 1, "expected `noise sigma`");
            } else if (word == "seed") {
                if (!(ls >> spec.rng_seed)) throw ParseError(lineno, 1, "expected `seed n`");
            } else {
                throw ParseError(lineno, 1, "unknown directive `" + word + "`");
            }
        }
        spec.validate();
        return spec;
    }

    std::string serialize() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& s : shapes)
            os << "ellipsoid " << s.center.x << " " << s.center.y << " " << s.center.z << " "
               << s.radii[0] << " " << s.radii[1] << " " << s.radii[2] << " " << s.intensity << " "
               << s.label << "\n";
        os << "noise " << noise_sigma << "\n";
        os << "seed " << rng_seed << "\n";
        return os.str();
    }
};

namespace detail {

/// Index of the shape whose normalized radial distance at p is smallest and
/// <= 1, or -1 for background.
inline int nearest_shape(const PhantomSpec& spec, const WorldPoint& p) {
    int best = -1;
    double best_rho = std::numeric_limits<double>::max();
    for (std::size_t s = 0; s < spec.shapes.size(); ++s) {
        const EllipsoidSpec& e = spec.shapes[s];
        const double dx = (p.x - e.center.x) / e.radii[0];
        const double dy = (p.y - e.center.y) / e.radii[1];
        const double dz = (p.z - e.center.z) / e.radii[2];
        const double rho = dx * dx + dy * dy + dz * dz;
        if (rho <= 1.0 && rho < best_rho) {
            best_rho = rho;
            best = static_cast<int>(s);
        }
    }
    return best;
}

inline float analytic_intensity(const PhantomSpec& spec, const WorldPoint& p) {
    const int s = nearest_shape(spec, p);
    return s < 0 ? 0.0f : spec.shapes[static_cast<std::size_t>(s)].intensity;
}

}  // namespace detail

/// Rasterizes the spec onto the given grid with 2x supersampled edge
/// antialiasing for intensities and center-sample nearest-shape labels.
/// Deterministic per seed, bit-identical for any thread count.
///
/// An optional pull-back map evaluates the anatomy in a deformed frame:
/// the value at world point p is taken from the analytic field at
/// pullback(p). Used by make_pair to render the fixed image of a
/// transformed pair without resampling the moving one.
template <typename PullbackFn>
Volume render_with_pullback(const PhantomSpec& spec, std::array<int, 3> dims,
                            const WorldAffine& affine, PullbackFn&& pullback,
                            std::uint64_t noise_stream) {
    spec.validate();
    Volume vol(dims, affine);
    vol.labels.assign(vol.voxel_count(), 0);
    static constexpr double kSub[2] = {-0.25, 0.25};

    parallel_for(static_cast<std::int64_t>(dims[2]), [&](std::int64_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                double acc = 0.0;
                for (double dk : kSub)
                    for (double dj : kSub)
                        for (double di : kSub) {
                            const WorldPoint p =
                                voxel_to_world(affine, {i + di, j + dj, k + dk});
                            acc += detail::analytic_intensity(spec, pullback(p));
                        }
                const std::size_t idx = vol.index(i, j, k);
                double value = acc / 8.0;
                if (spec.noise_sigma > 0.0)
                    value += spec.noise_sigma *
                             detail::hashed_normal(spec.rng_seed ^ noise_stream,
                                                   static_cast<std::uint64_t>(idx));
                vol.data[idx] = static_cast<float>(value);
                const WorldPoint center = voxel_to_world(
                    affine, {static_cast<double>(i), static_cast<double>(j),
                             static_cast<double>(k)});
                const int s = detail::nearest_shape(spec, pullback(center));
                vol.labels[idx] = s < 0 ? 0 : spec.shapes[static_cast<std::size_t>(s)].label;
            }
    });
    return vol;
}

inline Volume render(const PhantomSpec& spec, std::array<int, 3> dims, const WorldAffine& affine) {
    return render_with_pullback(
        spec, dims, affine, [](const WorldPoint& p) { return p; }, 0);
}

/// A rendered pair with its exact registration answer.
struct GroundTruth {
    WorldTransform world_transform;  // moving -> fixed on forward()
    Volume moving;
    Volume fixed;
    KeypointSet true_moving;
    KeypointSet true_fixed;
};

/// Acquisition-plane permutations for the fixed grid: which world axis each
/// voxel axis runs along. Stacks conventionally carry the thick slice
/// spacing in the middle dim, so coronal puts that axis across world y and
/// sagittal across world x, with the in-plane axes reordered accordingly.
enum class Orientation { Axial, Coronal, Sagittal };

inline std::array<int, 3> orientation_permutation(Orientation o) {
    switch (o) {
        case Orientation::Coronal: return {2, 1, 0};
        case Orientation::Sagittal: return {1, 0, 2};
        default: return {0, 1, 2};
    }
}

namespace detail {

struct Bounds {
    WorldPoint lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                  std::numeric_limits<double>::max()};
    WorldPoint hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
                  std::numeric_limits<double>::lowest()};
    void include(const WorldPoint& p) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
};

inline Bounds shape_bounds(const PhantomSpec& spec) {
    Bounds b;
    for (const auto& s : spec.shapes) {
        b.include({s.center.x - s.radii[0], s.center.y - s.radii[1], s.center.z - s.radii[2]});
        b.include({s.center.x + s.radii[0], s.center.y + s.radii[1], s.center.z + s.radii[2]});
    }
    return b;
}

}  // namespace detail

inline constexpr double kPhantomMarginMm = 12.0;

/// Renders a moving/fixed pair under the ground-truth map g (moving->fixed
/// world). The moving image is rendered on an axis-aligned grid at
/// spacing_m; the fixed image is rendered from the transformed analytic
/// anatomy on a grid at spacing_f whose voxel axes follow orientation_f.
/// Both grids are auto-fit around the anatomy with a fixed margin. True
/// keypoints are the shape centers and their images under g, unit
/// confidence.
inline GroundTruth make_pair(const PhantomSpec& spec, const WorldTransform& g,
                             std::array<double, 3> spacing_m, std::array<double, 3> spacing_f,
                             Orientation orientation_f = Orientation::Axial) {
    spec.validate();

    const detail::Bounds bm = detail::shape_bounds(spec);
    std::array<int, 3> dims_m;
    std::array<double, 12> rows_m{};
    const WorldPoint origin_m{bm.lo.x - kPhantomMarginMm, bm.lo.y - kPhantomMarginMm,
                              bm.lo.z - kPhantomMarginMm};
    const double ext_m[3] = {bm.hi.x - bm.lo.x + 2.0 * kPhantomMarginMm,
                             bm.hi.y - bm.lo.y + 2.0 * kPhantomMarginMm,
                             bm.hi.z - bm.lo.z + 2.0 * kPhantomMarginMm};
    for (int a = 0; a < 3; ++a) {
        dims_m[static_cast<std::size_t>(a)] = std::max(
            2, static_cast<int>(std::ceil(ext_m[a] / spacing_m[static_cast<std::size_t>(a)])) + 1);
        rows_m[static_cast<std::size_t>(a) * 4 + static_cast<std::size_t>(a)] =
            spacing_m[static_cast<std::size_t>(a)];
    }
    rows_m[3] = origin_m.x;
    rows_m[7] = origin_m.y;
    rows_m[11] = origin_m.z;
    const WorldAffine affine_m = WorldAffine::from_rows(rows_m);
    Volume moving = render(spec, dims_m, affine_m);

    // Fixed-side bounds from the images of the moving bounding box corners.
    detail::Bounds bf;
    for (int c = 0; c < 8; ++c)
        bf.include(g.forward({(c & 1) ? bm.hi.x : bm.lo.x, (c & 2) ? bm.hi.y : bm.lo.y,
                              (c & 4) ? bm.hi.z : bm.lo.z}));
    const std::array<int, 3> perm = orientation_permutation(orientation_f);
    const double lo_f[3] = {bf.lo.x - kPhantomMarginMm, bf.lo.y - kPhantomMarginMm,
                            bf.lo.z - kPhantomMarginMm};
    const double ext_f[3] = {bf.hi.x - bf.lo.x + 2.0 * kPhantomMarginMm,
                             bf.hi.y - bf.lo.y + 2.0 * kPhantomMarginMm,
                             bf.hi.z - bf.lo.z + 2.0 * kPhantomMarginMm};
    std::array<int, 3> dims_f;
    std::array<double, 12> rows_f{};
    for (int axis = 0; axis < 3; ++axis) {
        const int world_axis = perm[static_cast<std::size_t>(axis)];
        dims_f[static_cast<std::size_t>(axis)] =
            std::max(2, static_cast<int>(std::ceil(ext_f[world_axis] /
                                                   spacing_f[static_cast<std::size_t>(axis)])) +
                            1);
        // column `axis` points along world axis `world_axis`
        rows_f[static_cast<std::size_t>(world_axis) * 4 + static_cast<std::size_t>(axis)] =
            spacing_f[static_cast<std::size_t>(axis)];
    }
    rows_f[3] = lo_f[0];
    rows_f[7] = lo_f[1];
    rows_f[11] = lo_f[2];
    const WorldAffine affine_f = WorldAffine::from_rows(rows_f);

    Volume fixed = render_with_pullback(
        spec, dims_f, affine_f, [&g](const WorldPoint& p) { return g.pullback(p); }, 0x5f1d);

    std::vector<WorldPoint> km, kf;
    for (const auto& s : spec.shapes) {
        km.push_back(s.center);
        kf.push_back(g.forward(s.center));
    }
    return GroundTruth{g, std::move(moving), std::move(fixed),
                       KeypointSet::with_unit_confidence(km),
                       KeypointSet::with_unit_confidence(kf)};
}

}  // namespace rkm

#endif
