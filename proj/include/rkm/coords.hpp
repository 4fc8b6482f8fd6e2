#ifndef RKM_COORDS_HPP
#define RKM_COORDS_HPP

// Homogeneous-coordinate algebra for voxel<->world mappings.
//
// Voxel indices are continuous grid positions (voxel centers at integer
// indices); world coordinates are scanner millimeters. A volume's header
// affine maps (i, j, k, 1) to (x, y, z, 1).

#include <array>
#include <cmath>
#include <cstddef>

#include "rkm/errors.hpp"

namespace rkm {

/// Continuous voxel grid position. Fractional values are meaningful
/// (interpolation sites); integers are voxel centers.
struct VoxelIndex {
    double i = 0.0;
    double j = 0.0;
    double k = 0.0;
};

/// Position in scanner space, millimeters.
struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline WorldPoint operator-(const WorldPoint& a, const WorldPoint& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
}

inline WorldPoint operator+(const WorldPoint& a, const WorldPoint& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
}

inline WorldPoint operator*(double s, const WorldPoint& p) {
    return {s * p.x, s * p.y, s * p.z};
}

inline double norm(const WorldPoint& p) {
    return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
}

inline double distance(const WorldPoint& a, const WorldPoint& b) { return norm(a - b); }

/// Plain row-major 4x4 matrix. No invariants of its own; WorldAffine and the
/// solver transform types wrap it with their respective contracts.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity() {
        Mat4 r;
        r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
        return r;
    }

    double at(int row, int col) const { return m[static_cast<std::size_t>(row) * 4 + col]; }
    double& at(int row, int col) { return m[static_cast<std::size_t>(row) * 4 + col]; }
};

inline bool operator==(const Mat4& a, const Mat4& b) { return a.m == b.m; }

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
            r.at(i, j) = s;
        }
    return r;
}

/// Applies an affine 4x4 (last row (0,0,0,1)) to a point, homogeneous 1 appended.
inline WorldPoint mat4_apply(const Mat4& a, double x, double y, double z) {
    return {a.at(0, 0) * x + a.at(0, 1) * y + a.at(0, 2) * z + a.at(0, 3),
            a.at(1, 0) * x + a.at(1, 1) * y + a.at(1, 2) * z + a.at(1, 3),
            a.at(2, 0) * x + a.at(2, 1) * y + a.at(2, 2) * z + a.at(2, 3)};
}

inline WorldPoint mat4_apply(const Mat4& a, const WorldPoint& p) {
    return mat4_apply(a, p.x, p.y, p.z);
}

inline double mat4_det3(const Mat4& a) {
    return a.at(0, 0) * (a.at(1, 1) * a.at(2, 2) - a.at(1, 2) * a.at(2, 1)) -
           a.at(0, 1) * (a.at(1, 0) * a.at(2, 2) - a.at(1, 2) * a.at(2, 0)) +
           a.at(0, 2) * (a.at(1, 0) * a.at(2, 1) - a.at(1, 1) * a.at(2, 0));
}

inline bool mat4_last_row_pinned(const Mat4& a) {
    return a.at(3, 0) == 0.0 && a.at(3, 1) == 0.0 && a.at(3, 2) == 0.0 && a.at(3, 3) == 1.0;
}

/// Threshold below which a 3x3 determinant magnitude is treated as singular.
/// Well below any physical voxel spacing; catches degenerate headers.
inline constexpr double kSingularDet = 1e-12;

/// Inverts an affine 4x4 with pinned last row via the cofactor inverse of the
/// 3x3 block. Throws SingularAffine when |det| <= kSingularDet.
inline Mat4 mat4_invert_affine(const Mat4& a) {
    const double det = mat4_det3(a);
    if (std::abs(det) <= kSingularDet)
        throw SingularAffine("3x3 block determinant magnitude " + std::to_string(std::abs(det)) +
                             " <= 1e-12");
    const double inv = 1.0 / det;
    Mat4 r = Mat4::identity();
    r.at(0, 0) = (a.at(1, 1) * a.at(2, 2) - a.at(1, 2) * a.at(2, 1)) * inv;
    r.at(0, 1) = (a.at(0, 2) * a.at(2, 1) - a.at(0, 1) * a.at(2, 2)) * inv;
    r.at(0, 2) = (a.at(0, 1) * a.at(1, 2) - a.at(0, 2) * a.at(1, 1)) * inv;
    r.at(1, 0) = (a.at(1, 2) * a.at(2, 0) - a.at(1, 0) * a.at(2, 2)) * inv;
    r.at(1, 1) = (a.at(0, 0) * a.at(2, 2) - a.at(0, 2) * a.at(2, 0)) * inv;
    r.at(1, 2) = (a.at(0, 2) * a.at(1, 0) - a.at(0, 0) * a.at(1, 2)) * inv;
    r.at(2, 0) = (a.at(1, 0) * a.at(2, 1) - a.at(1, 1) * a.at(2, 0)) * inv;
    r.at(2, 1) = (a.at(0, 1) * a.at(2, 0) - a.at(0, 0) * a.at(2, 1)) * inv;
    r.at(2, 2) = (a.at(0, 0) * a.at(1, 1) - a.at(0, 1) * a.at(1, 0)) * inv;
    // translation: -R^-1 t
    const double tx = a.at(0, 3), ty = a.at(1, 3), tz = a.at(2, 3);
    r.at(0, 3) = -(r.at(0, 0) * tx + r.at(0, 1) * ty + r.at(0, 2) * tz);
    r.at(1, 3) = -(r.at(1, 0) * tx + r.at(1, 1) * ty + r.at(1, 2) * tz);
    r.at(2, 3) = -(r.at(2, 0) * tx + r.at(2, 1) * ty + r.at(2, 2) * tz);
    return r;
}

/// A volume header affine: voxel index -> world millimeters.
///
/// Invariants enforced at construction: last row exactly (0,0,0,1), finite
/// entries, invertible 3x3 block (|det| > 1e-12).
class WorldAffine {
  public:
    WorldAffine() : mat_(Mat4::identity()) {}

    explicit WorldAffine(const Mat4& m) : mat_(m) { validate(); }

    static WorldAffine identity() { return WorldAffine(); }

    /// Builds from the 12 meaningful entries (three rows of four); the last
    /// row is pinned implicitly.
    static WorldAffine from_rows(const std::array<double, 12>& rows) {
        Mat4 m = Mat4::identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) m.at(r, c) = rows[static_cast<std::size_t>(r) * 4 + c];
        return WorldAffine(m);
    }

    static WorldAffine scaling(double sx, double sy, double sz, double tx = 0.0, double ty = 0.0,
                               double tz = 0.0) {
        return from_rows({sx, 0, 0, tx, 0, sy, 0, ty, 0, 0, sz, tz});
    }

    static WorldAffine translation(double tx, double ty, double tz) {
        return scaling(1.0, 1.0, 1.0, tx, ty, tz);
    }

    const Mat4& matrix() const { return mat_; }
    double at(int row, int col) const { return mat_.at(row, col); }

    /// Physical step per unit voxel index along one grid axis (column norm), mm.
    double spacing(int axis) const {
        return std::sqrt(mat_.at(0, axis) * mat_.at(0, axis) + mat_.at(1, axis) * mat_.at(1, axis) +
                         mat_.at(2, axis) * mat_.at(2, axis));
    }

    friend bool operator==(const WorldAffine& a, const WorldAffine& b) { return a.mat_ == b.mat_; }

  private:
    void validate() const {
        if (!mat4_last_row_pinned(mat_)) throw Error("affine last row must be (0,0,0,1)");
        for (double v : mat_.m)
            if (!std::isfinite(v)) throw Error("affine entries must be finite");
        if (std::abs(mat4_det3(mat_)) <= kSingularDet)
            throw SingularAffine("header affine 3x3 block is numerically singular");
    }

    Mat4 mat_;
};

inline WorldPoint voxel_to_world(const WorldAffine& a, const VoxelIndex& v) {
    return mat4_apply(a.matrix(), v.i, v.j, v.k);
}

inline VoxelIndex world_to_voxel(const WorldAffine& a, const WorldPoint& p) {
    const WorldPoint q = mat4_apply(mat4_invert_affine(a.matrix()), p);
    return {q.x, q.y, q.z};
}

/// compose(outer, inner) maps x through inner first: result * x = outer * (inner * x).
inline WorldAffine compose(const WorldAffine& outer, const WorldAffine& inner) {
    Mat4 m = mat4_mul(outer.matrix(), inner.matrix());
    m.at(3, 0) = 0.0;
    m.at(3, 1) = 0.0;
    m.at(3, 2) = 0.0;
    m.at(3, 3) = 1.0;
    return WorldAffine(m);
}

inline WorldAffine invert(const WorldAffine& a) {
    return WorldAffine(mat4_invert_affine(a.matrix()));
}

/// Maps a point of the normalized cube [-1,1]^3 onto continuous voxel
/// indices: -1 lands on voxel 0 and +1 on voxel dim-1 (voxel-center
/// convention), linear in between. A degenerate axis (dim == 1) maps to 0.
inline VoxelIndex normalized_to_voxel(const std::array<int, 3>& dims,
                                      const std::array<double, 3>& n) {
    VoxelIndex v;
    v.i = 0.5 * (n[0] + 1.0) * (dims[0] - 1);
    v.j = 0.5 * (n[1] + 1.0) * (dims[1] - 1);
    v.k = 0.5 * (n[2] + 1.0) * (dims[2] - 1);
    return v;
}

/// Inverse of normalized_to_voxel on non-degenerate axes; a dim-1 axis maps
/// to normalized 0 by convention.
inline std::array<double, 3> voxel_to_normalized(const std::array<int, 3>& dims,
                                                 const VoxelIndex& v) {
    auto conv = [](double x, int dim) { return dim > 1 ? 2.0 * x / (dim - 1) - 1.0 : 0.0; };
    return {conv(v.i, dims[0]), conv(v.j, dims[1]), conv(v.k, dims[2])};
}

}  // namespace rkm

#endif
