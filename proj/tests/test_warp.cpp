#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <vector>

#include "rkm/parallel.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"
#include "rkm/warp.hpp"

using namespace rkm;

namespace {

// Reference sampler: a plain serial per-voxel composition of the three maps,
// written independently of the library path. Criterion: bit-identical.
float reference_trilinear(const Volume& vol, double x, double y, double z) {
    const double fi = std::floor(x), fj = std::floor(y), fk = std::floor(z);
    const int i0 = static_cast<int>(fi), j0 = static_cast<int>(fj), k0 = static_cast<int>(fk);
    const double fx = x - fi, fy = y - fj, fz = z - fk;
    auto get = [&vol](int i, int j, int k) -> double {
        if (i < 0 || j < 0 || k < 0 || i >= vol.dims[0] || j >= vol.dims[1] || k >= vol.dims[2])
            return 0.0;
        return vol.at(i, j, k);
    };
    const double c00 = (1.0 - fx) * get(i0, j0, k0) + fx * get(i0 + 1, j0, k0);
    const double c10 = (1.0 - fx) * get(i0, j0 + 1, k0) + fx * get(i0 + 1, j0 + 1, k0);
    const double c01 = (1.0 - fx) * get(i0, j0, k0 + 1) + fx * get(i0 + 1, j0, k0 + 1);
    const double c11 = (1.0 - fx) * get(i0, j0 + 1, k0 + 1) + fx * get(i0 + 1, j0 + 1, k0 + 1);
    const double c0 = (1.0 - fy) * c00 + fy * c10;
    const double c1 = (1.0 - fy) * c01 + fy * c11;
    return static_cast<float>((1.0 - fz) * c0 + fz * c1);
}

Volume reference_warp(const Volume& moving, const Volume& fixed_grid, const WorldTransform& t) {
    Volume out(fixed_grid.dims, fixed_grid.affine);
    if (moving.has_labels()) out.labels.assign(out.voxel_count(), 0);
    const Mat4& a_f = fixed_grid.affine.matrix();
    const Mat4 a_m_inv = mat4_invert_affine(moving.affine.matrix());
    for (int k = 0; k < fixed_grid.dims[2]; ++k)
        for (int j = 0; j < fixed_grid.dims[1]; ++j)
            for (int i = 0; i < fixed_grid.dims[0]; ++i) {
                const WorldPoint pf = mat4_apply(a_f, static_cast<double>(i),
                                                 static_cast<double>(j), static_cast<double>(k));
                const WorldPoint pm = t.pullback(pf);
                const WorldPoint v = mat4_apply(a_m_inv, pm);
                out.data[out.index(i, j, k)] = reference_trilinear(moving, v.x, v.y, v.z);
                if (moving.has_labels()) {
                    const int ni = static_cast<int>(std::floor(v.x + 0.5));
                    const int nj = static_cast<int>(std::floor(v.y + 0.5));
                    const int nk = static_cast<int>(std::floor(v.z + 0.5));
                    out.labels[out.index(i, j, k)] =
                        moving.in_bounds(ni, nj, nk) ? moving.label_at(ni, nj, nk) : 0;
                }
            }
    return out;
}

Volume random_volume(std::mt19937& rng, std::array<int, 3> dims, const WorldAffine& affine,
                     bool with_labels = false) {
    Volume vol(dims, affine);
    std::uniform_real_distribution<float> value(-2.0f, 5.0f);
    for (auto& v : vol.data) v = value(rng);
    if (with_labels) {
        vol.labels.resize(vol.voxel_count());
        std::uniform_int_distribution<int> label(0, 3);
        for (auto& l : vol.labels) l = label(rng);
    }
    return vol;
}

WorldAffine random_header_affine(std::mt19937& rng) {
    std::uniform_real_distribution<double> entry(-0.2, 0.2);
    std::uniform_real_distribution<double> diag(0.7, 2.0);
    std::uniform_real_distribution<double> shift(-10.0, 10.0);
    std::array<double, 12> rows{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) rows[static_cast<std::size_t>(r) * 4 + c] = entry(rng);
        rows[static_cast<std::size_t>(r) * 4 + r] = diag(rng);
        rows[static_cast<std::size_t>(r) * 4 + 3] = shift(rng);
    }
    return WorldAffine::from_rows(rows);
}

}  // namespace

TEST_CASE("identity transform on the same grid reproduces the volume") {
    std::mt19937 rng(1);
    const Volume moving = random_volume(rng, {12, 10, 14}, WorldAffine::scaling(1.5, 1.0, 2.0));
    const Volume out = warp_to_fixed_grid(moving, moving, WorldTransform::identity());
    for (std::size_t i = 0; i < out.data.size(); ++i)
        CHECK(std::abs(out.data[i] - moving.data[i]) < 1e-6f);
}

TEST_CASE("translation by one voxel spacing shifts the array by one voxel") {
    std::mt19937 rng(2);
    const double spacing = 1.25;
    const Volume moving =
        random_volume(rng, {10, 8, 8}, WorldAffine::scaling(spacing, 1.0, 1.0));
    // moving->fixed translation +spacing along world x: content moves one
    // voxel toward higher i on the same grid, zero slab enters at i = 0
    const WorldTransform t = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::translation(spacing, 0, 0).matrix()));
    const Volume out = warp_to_fixed_grid(moving, moving, t);
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 10; ++i) {
                const float expected = i == 0 ? 0.0f : moving.at(i - 1, j, k);
                CHECK(std::abs(out.at(i, j, k) - expected) < 1e-6f);
            }
}

TEST_CASE("warp matches the reference sampler bit-exactly across random transforms") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::array<int, 3> dims_m = {static_cast<int>(8 + rng() % 24),
                                           static_cast<int>(8 + rng() % 24),
                                           static_cast<int>(8 + rng() % 24)};
        const std::array<int, 3> dims_f = {static_cast<int>(8 + rng() % 24),
                                           static_cast<int>(8 + rng() % 24),
                                           static_cast<int>(8 + rng() % 24)};
        const Volume moving = random_volume(rng, dims_m, random_header_affine(rng), true);
        const Volume fixed_grid = random_volume(rng, dims_f, random_header_affine(rng));

        WorldTransform t = WorldTransform::identity();
        if (trial % 2 == 0) {
            std::uniform_real_distribution<double> entry(-0.15, 0.15);
            std::uniform_real_distribution<double> shift(-6.0, 6.0);
            std::array<double, 12> rows{};
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) rows[static_cast<std::size_t>(r) * 4 + c] = entry(rng);
                rows[static_cast<std::size_t>(r) * 4 + r] = 1.0 + entry(rng);
                rows[static_cast<std::size_t>(r) * 4 + 3] = shift(rng);
            }
            t = WorldTransform::from_moving_to_fixed_affine(
                AffineTransform(WorldAffine::from_rows(rows).matrix()));
        } else {
            std::uniform_real_distribution<double> coord(-20.0, 40.0);
            std::uniform_real_distribution<double> bump(-3.0, 3.0);
            std::vector<WorldPoint> a, b;
            for (int p = 0; p < 6; ++p) {
                const WorldPoint q{coord(rng), coord(rng), coord(rng)};
                a.push_back(q);
                b.push_back(q + WorldPoint{bump(rng), bump(rng), bump(rng)});
            }
            t = WorldTransform::from_pullback_tps(solve_tps(KeypointSet::with_unit_confidence(a),
                                                            KeypointSet::with_unit_confidence(b),
                                                            trial % 4 == 1 ? 0.0 : 1.0));
        }

        const Volume got = warp_to_fixed_grid(moving, fixed_grid, t);
        const Volume want = reference_warp(moving, fixed_grid, t);
        REQUIRE(got.data.size() == want.data.size());
        CHECK(std::memcmp(got.data.data(), want.data.data(), got.data.size() * sizeof(float)) == 0);
        REQUIRE(got.labels.size() == want.labels.size());
        CHECK(got.labels == want.labels);
    }
}

TEST_CASE("anisotropic thick-slice grids match the reference sampler") {
    std::mt19937 rng(30);
    const Volume moving =
        random_volume(rng, {24, 24, 6}, WorldAffine::scaling(1.18, 1.18, 6.0), true);
    const Volume fixed_grid =
        random_volume(rng, {20, 7, 20}, WorldAffine::scaling(1.4, 5.0, 1.4, -2.0, 1.0, 0.5));
    const WorldTransform t = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::translation(3.5, -1.25, 2.0).matrix()));
    const Volume got = warp_to_fixed_grid(moving, fixed_grid, t);
    const Volume want = reference_warp(moving, fixed_grid, t);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-5f);
    CHECK(std::memcmp(got.data.data(), want.data.data(), got.data.size() * sizeof(float)) == 0);
}

TEST_CASE("thread count does not change the output bits") {
    std::mt19937 rng(4);
    const Volume moving = random_volume(rng, {24, 20, 28}, random_header_affine(rng), true);
    const Volume fixed_grid = random_volume(rng, {20, 24, 16}, random_header_affine(rng));
    const WorldTransform t = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::scaling(1.1, 0.9, 1.05, 2.0, -1.0, 0.5).matrix()));

    set_thread_cap(1);
    const Volume serial = warp_to_fixed_grid(moving, fixed_grid, t);
    set_thread_cap(8);
    const Volume threaded = warp_to_fixed_grid(moving, fixed_grid, t);
    set_thread_cap(1);
    CHECK(std::memcmp(serial.data.data(), threaded.data.data(),
                      serial.data.size() * sizeof(float)) == 0);
    CHECK(serial.labels == threaded.labels);
}

TEST_CASE("nearest label warping never invents labels and fills with zero") {
    std::mt19937 rng(5);
    Volume moving = random_volume(rng, {16, 16, 16}, WorldAffine::identity(), false);
    moving.labels.assign(moving.voxel_count(), 0);
    for (int k = 4; k < 12; ++k)
        for (int j = 4; j < 12; ++j)
            for (int i = 4; i < 12; ++i) moving.labels[moving.index(i, j, k)] = (i < 8) ? 5 : 9;

    const WorldTransform t = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::translation(10.0, -3.5, 2.25).matrix()));
    const Volume out = warp_to_fixed_grid(moving, moving, t);

    std::set<int> seen(out.labels.begin(), out.labels.end());
    for (int l : seen) CHECK((l == 0 || l == 5 || l == 9));

    // voxels pulled from outside the moving grid are exactly zero
    bool found_oob = false;
    for (int k = 0; k < 16 && !found_oob; ++k)
        for (int j = 0; j < 16 && !found_oob; ++j) {
            // i = 15 maps back to i = 15 - 10/1 = 5 ... use the far slab i=0
            const float v = out.at(0, j, k);
            found_oob = true;
            CHECK(v == 0.0f);
            CHECK(out.label_at(0, j, k) == 0);
        }
}

TEST_CASE("nearest intensity mode samples without blending") {
    std::mt19937 rng(6);
    const Volume moving = random_volume(rng, {8, 8, 8}, WorldAffine::identity());
    const WorldTransform t = WorldTransform::from_moving_to_fixed_affine(
        AffineTransform(WorldAffine::translation(0.3, 0.0, 0.0).matrix()));
    const Volume out = warp_to_fixed_grid(moving, moving, t, InterpolationMode::Nearest);
    // a 0.3-voxel shift rounds back to the same voxel under nearest sampling
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 8; ++i) CHECK(out.at(i, j, k) == moving.at(i, j, k));
}

// ---- displacement fields --------------------------------------------------------

TEST_CASE("identity displacement field is zero") {
    std::mt19937 rng(7);
    const Volume grid = random_volume(rng, {6, 6, 6}, WorldAffine::scaling(2, 2, 2));
    const DisplacementField f = displacement_field(grid, WorldTransform::identity());
    for (const auto& v : f.vectors) {
        CHECK(v[0] == 0.0f);
        CHECK(v[1] == 0.0f);
        CHECK(v[2] == 0.0f);
    }
}

TEST_CASE("pull-back translation gives a constant field") {
    std::mt19937 rng(8);
    const Volume grid = random_volume(rng, {6, 6, 6}, WorldAffine::identity());
    const WorldTransform t = WorldTransform::from_pullback_affine(
        AffineTransform(WorldAffine::translation(5, 0, 0).matrix()));
    const DisplacementField f = displacement_field(grid, t);
    for (const auto& v : f.vectors) {
        CHECK(v[0] == 5.0f);
        CHECK(v[1] == 0.0f);
        CHECK(v[2] == 0.0f);
    }
}

TEST_CASE("tps field reproduces keypoint displacements near control points") {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> coord(4.0, 27.0);
    std::uniform_real_distribution<double> bump(-2.0, 2.0);
    std::vector<WorldPoint> fixed_pts, moving_pts;
    for (int p = 0; p < 6; ++p) {
        const WorldPoint q{coord(rng), coord(rng), coord(rng)};
        fixed_pts.push_back(q);
        moving_pts.push_back(q + WorldPoint{bump(rng), bump(rng), bump(rng)});
    }
    const TpsTransform tps = solve_tps(KeypointSet::with_unit_confidence(fixed_pts),
                                       KeypointSet::with_unit_confidence(moving_pts), 0.0);
    const WorldTransform t = WorldTransform::from_pullback_tps(tps);

    const Volume grid({32, 32, 32}, WorldAffine::identity());
    const DisplacementField f = displacement_field(grid, t);
    for (std::size_t p = 0; p < fixed_pts.size(); ++p) {
        const int i = static_cast<int>(std::llround(fixed_pts[p].x));
        const int j = static_cast<int>(std::llround(fixed_pts[p].y));
        const int k = static_cast<int>(std::llround(fixed_pts[p].z));
        const auto& v = f.vectors[grid.index(i, j, k)];
        const WorldPoint expected = moving_pts[p] - fixed_pts[p];
        // within one voxel's worth of field variation around the control point
        const WorldPoint got{v[0], v[1], v[2]};
        CHECK(distance(got, expected) < 1.0);
    }
}

TEST_CASE("forward of a pull-back tps inverts it") {
    std::mt19937 rng(10);
    std::uniform_real_distribution<double> coord(0.0, 40.0);
    std::uniform_real_distribution<double> bump(-3.0, 3.0);
    std::vector<WorldPoint> a, b;
    for (int p = 0; p < 7; ++p) {
        const WorldPoint q{coord(rng), coord(rng), coord(rng)};
        a.push_back(q);
        b.push_back(q + WorldPoint{bump(rng), bump(rng), bump(rng)});
    }
    const WorldTransform t = WorldTransform::from_pullback_tps(
        solve_tps(KeypointSet::with_unit_confidence(a), KeypointSet::with_unit_confidence(b), 0.5));
    for (int q = 0; q < 25; ++q) {
        const WorldPoint p{coord(rng), coord(rng), coord(rng)};
        const WorldPoint back = t.pullback(t.forward(p));
        CHECK(distance(back, p) < 1e-9);
    }
}
