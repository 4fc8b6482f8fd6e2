#ifndef RKM_TESTS_SUPPORT_HPP
#define RKM_TESTS_SUPPORT_HPP

// Shared fixtures for the test suites: a well-separated sphere anatomy whose
// eight blobs have distinct sizes and intensities (stable detector response
// ordering), plus a detector configuration tuned for it.

#include <array>
#include <cstdint>
#include <string>

#include "rkm/keypoints.hpp"
#include "rkm/phantom.hpp"

namespace rkm_tests {

/// Eight spheres on a jittered 2x2x2 lattice, radii 9..13 mm, distinct
/// intensities, labels 1..8.
inline rkm::PhantomSpec sphere_phantom(double noise_sigma = 0.0, std::uint64_t seed = 0) {
    rkm::PhantomSpec spec;
    spec.noise_sigma = noise_sigma;
    spec.rng_seed = seed;
    const double c = 24.0;
    const std::array<rkm::WorldPoint, 8> centers = {{{-c - 4, -c + 2, -c - 1},
                                                     {c + 5, -c - 3, -c + 4},
                                                     {-c + 2, c + 4, -c - 5},
                                                     {c - 1, c - 2, -c + 3},
                                                     {-c - 3, -c - 5, c + 2},
                                                     {c + 4, -c + 1, c - 3},
                                                     {-c + 5, c - 4, c + 1},
                                                     {c - 2, c + 3, c + 5}}};
    const std::array<double, 8> radii = {13.0, 12.5, 12.0, 11.5, 11.0, 10.5, 10.0, 9.0};
    const std::array<float, 8> intensities = {1.20f, 1.15f, 1.10f, 1.05f,
                                              1.00f, 0.95f, 0.90f, 0.85f};
    for (int s = 0; s < 8; ++s)
        spec.shapes.push_back({centers[static_cast<std::size_t>(s)],
                               {radii[static_cast<std::size_t>(s)],
                                radii[static_cast<std::size_t>(s)],
                                radii[static_cast<std::size_t>(s)]},
                               intensities[static_cast<std::size_t>(s)], s + 1});
    return spec;
}

inline rkm::DetectorConfig sphere_detector() {
    rkm::DetectorConfig cfg;
    cfg.n_keypoints = 8;
    cfg.blob_scales = {5.0, 6.5, 8.0};
    return cfg;
}

/// Larger variant (radii 13.5..18 mm) for thick-slice acquisitions, where
/// label rasterization on 5-6 mm slices would dominate the Dice of smaller
/// structures.
inline rkm::PhantomSpec large_sphere_phantom(double noise_sigma = 0.0, std::uint64_t seed = 0) {
    rkm::PhantomSpec spec;
    spec.noise_sigma = noise_sigma;
    spec.rng_seed = seed;
    const double c = 27.0;
    const std::array<rkm::WorldPoint, 8> centers = {{{-c - 4, -c + 2, -c - 1},
                                                     {c + 5, -c - 3, -c + 4},
                                                     {-c + 2, c + 4, -c - 5},
                                                     {c - 1, c - 2, -c + 3},
                                                     {-c - 3, -c - 5, c + 2},
                                                     {c + 4, -c + 1, c - 3},
                                                     {-c + 5, c - 4, c + 1},
                                                     {c - 2, c + 3, c + 5}}};
    const std::array<double, 8> radii = {18.0, 17.5, 17.0, 16.5, 16.0, 15.5, 14.5, 13.5};
    const std::array<float, 8> intensities = {1.20f, 1.15f, 1.10f, 1.05f,
                                              1.00f, 0.95f, 0.90f, 0.85f};
    for (int s = 0; s < 8; ++s)
        spec.shapes.push_back({centers[static_cast<std::size_t>(s)],
                               {radii[static_cast<std::size_t>(s)],
                                radii[static_cast<std::size_t>(s)],
                                radii[static_cast<std::size_t>(s)]},
                               intensities[static_cast<std::size_t>(s)], s + 1});
    return spec;
}

inline rkm::DetectorConfig large_sphere_detector() {
    rkm::DetectorConfig cfg;
    cfg.n_keypoints = 8;
    cfg.blob_scales = {7.0, 9.0, 11.0};
    return cfg;
}

}  // namespace rkm_tests

#endif
