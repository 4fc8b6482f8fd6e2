#ifndef RKM_KEYPOINTS_HPP
#define RKM_KEYPOINTS_HPP

// Deterministic keypoint extraction: center-of-mass reduction of non-negative
// activation volumes with confidence pooling, plus a multi-scale
// Laplacian-of-Gaussian blob detector as the built-in activation source.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/parallel.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"

namespace rkm {

/// N scalar activation maps over one shared voxel grid. Values are clamped
/// to >= 0 on ingestion (the reduction below is only defined for
/// non-negative mass).
class ActivationStack {
  public:
    ActivationStack(std::vector<std::vector<float>> maps, std::array<int, 3> dims,
                    const WorldAffine& affine)
        : maps_(std::move(maps)), dims_(dims), affine_(affine) {
        const std::size_t count = Volume::checked_count(dims_);
        if (maps_.empty()) throw Error("activation stack must hold at least one map");
        for (auto& m : maps_) {
            if (m.size() != count) throw Error("activation map size does not match dims");
            for (auto& v : m) v = std::max(v, 0.0f);
        }
    }

    std::size_t n_maps() const { return maps_.size(); }
    const std::array<int, 3>& dims() const { return dims_; }
    const WorldAffine& affine() const { return affine_; }
    const std::vector<float>& map(std::size_t i) const { return maps_[i]; }

  private:
    std::vector<std::vector<float>> maps_;
    std::array<int, 3> dims_;
    WorldAffine affine_;
};

/// Blob detector settings. Scales are Gaussian sigmas in millimeters.
struct DetectorConfig {
    int n_keypoints = 8;
    std::vector<double> blob_scales = {4.0, 6.0, 9.0};
    double min_activation_mass = 0.0;

    void validate() const {
        if (n_keypoints < 4) throw Error("detector: n_keypoints must be >= 4");
        if (blob_scales.empty()) throw Error("detector: needs at least one scale");
        double prev = 0.0;
        for (double s : blob_scales) {
            if (!(s > prev)) throw Error("detector: scales must be strictly positive increasing");
            prev = s;
        }
        if (min_activation_mass < 0.0) throw Error("detector: min_activation_mass must be >= 0");
    }
};

/// Reduces each activation map to its mass-weighted mean position and a
/// confidence equal to the map's spatial sum.
///
/// The mean is taken over the normalized cube [-1,1]^3, mapped back to voxel
/// indices (endpoints at voxel centers) and then to world millimeters through
/// the stack's affine. Throws ZeroMassMap when a map's total mass is not
/// above min_mass: a massless map has no defined center.
inline KeypointSet center_of_mass(const ActivationStack& stack, double min_mass = 0.0) {
    const auto& dims = stack.dims();
    std::vector<WorldPoint> points(stack.n_maps());
    std::vector<double> confidences(stack.n_maps());
    std::vector<std::string> failures(stack.n_maps());

    parallel_for(static_cast<std::int64_t>(stack.n_maps()), [&](std::int64_t mi) {
        const std::vector<float>& map = stack.map(static_cast<std::size_t>(mi));
        double total = 0.0;
        std::array<double, 3> acc{0.0, 0.0, 0.0};
        std::size_t idx = 0;
        for (int k = 0; k < dims[2]; ++k) {
            const double nk = dims[2] > 1 ? 2.0 * k / (dims[2] - 1) - 1.0 : 0.0;
            for (int j = 0; j < dims[1]; ++j) {
                const double nj = dims[1] > 1 ? 2.0 * j / (dims[1] - 1) - 1.0 : 0.0;
                for (int i = 0; i < dims[0]; ++i, ++idx) {
                    const double v = map[idx];
                    if (v == 0.0) continue;
                    const double ni = dims[0] > 1 ? 2.0 * i / (dims[0] - 1) - 1.0 : 0.0;
                    total += v;
                    acc[0] += v * ni;
                    acc[1] += v * nj;
                    acc[2] += v * nk;
                }
            }
        }
        if (!(total > min_mass)) {
            failures[static_cast<std::size_t>(mi)] =
                "map " + std::to_string(mi) + " total mass " + std::to_string(total) +
                " <= " + std::to_string(min_mass);
            return;
        }
        const std::array<double, 3> mean_n{acc[0] / total, acc[1] / total, acc[2] / total};
        const VoxelIndex v = normalized_to_voxel(dims, mean_n);
        points[static_cast<std::size_t>(mi)] = voxel_to_world(stack.affine(), v);
        confidences[static_cast<std::size_t>(mi)] = total;
    });

    for (const auto& f : failures)
        if (!f.empty()) throw ZeroMassMap(f);
    return KeypointSet(std::move(points), std::move(confidences));
}

/// Z-score intensity standardization: output mean 0, standard deviation 1
/// (population convention). Affine and labels pass through unchanged.
/// Throws ConstantVolume when the intensity variance is zero.
inline Volume zscore_normalize(const Volume& vol) {
    vol.check();
    const std::size_t n = vol.voxel_count();
    double mean = 0.0;
    for (float v : vol.data) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : vol.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    if (var == 0.0) throw ConstantVolume("zscore_normalize: volume has a single intensity value");
    const double inv_std = 1.0 / std::sqrt(var);

    Volume out = vol;
    for (auto& v : out.data) v = static_cast<float>((v - mean) * inv_std);
    return out;
}

namespace detail {

/// Separable Gaussian blur with per-axis sigma in voxels, replicated edges.
inline std::vector<float> gaussian_blur(const std::vector<float>& src,
                                        const std::array<int, 3>& dims,
                                        const std::array<double, 3>& sigma_vox) {
    std::vector<float> a = src, b(src.size());
    const std::array<std::size_t, 3> stride = {
        1, static_cast<std::size_t>(dims[0]),
        static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1])};

    for (int axis = 0; axis < 3; ++axis) {
        const double sigma = sigma_vox[static_cast<std::size_t>(axis)];
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
        double ksum = 0.0;
        for (int t = -radius; t <= radius; ++t) {
            const double v = std::exp(-0.5 * (t / sigma) * (t / sigma));
            kernel[static_cast<std::size_t>(t + radius)] = v;
            ksum += v;
        }
        for (auto& v : kernel) v /= ksum;

        const int len = dims[static_cast<std::size_t>(axis)];
        const std::size_t st = stride[static_cast<std::size_t>(axis)];
        // iterate over all lines along `axis`
        const int d0 = dims[(axis + 1) % 3], d1 = dims[(axis + 2) % 3];
        const std::size_t s0 = stride[static_cast<std::size_t>((axis + 1) % 3)];
        const std::size_t s1 = stride[static_cast<std::size_t>((axis + 2) % 3)];
        parallel_for(static_cast<std::int64_t>(d0) * d1, [&](std::int64_t line) {
            const std::size_t base = static_cast<std::size_t>(line % d0) * s0 +
                                     static_cast<std::size_t>(line / d0) * s1;
            for (int p = 0; p < len; ++p) {
                double s = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int q = std::clamp(p + t, 0, len - 1);
                    s += kernel[static_cast<std::size_t>(t + radius)] *
                         a[base + static_cast<std::size_t>(q) * st];
                }
                b[base + static_cast<std::size_t>(p) * st] = static_cast<float>(s);
            }
        });
        std::swap(a, b);
    }
    return a;
}

}  // namespace detail

/// Multi-scale LoG blob detection producing one soft activation map per
/// keypoint, strongest response first.
///
/// Expects Z-scored intensities (see zscore_normalize). Per scale the
/// scale-normalized negative Laplacian of the smoothed volume is computed in
/// millimeter units, so anisotropic spacing is handled through the affine.
/// Extrema are strict 3x3x3(xscale) local maxima above a fixed response
/// floor, kept in descending response order under non-maximum suppression
/// with radius 2x the detection scale. Each returned map is the non-negative
/// response of the winning scale under a Gaussian window (width = the
/// detection sigma, support 2 sigma) centered on the extremum, which keeps
/// the subsequent center-of-mass localization sub-voxel while isolated from
/// neighboring structures.
///
/// Deterministic for identical input bytes. Throws InsufficientStructure
/// when fewer than cfg.n_keypoints extrema survive.
inline ActivationStack detect_blobs(const Volume& vol, const DetectorConfig& cfg) {
    cfg.validate();
    vol.check();
    constexpr double kResponseFloor = 1e-6;

    const std::array<int, 3>& dims = vol.dims;
    const std::array<double, 3> spacing = {vol.affine.spacing(0), vol.affine.spacing(1),
                                           vol.affine.spacing(2)};
    const std::size_t count = vol.voxel_count();
    const std::size_t n_scales = cfg.blob_scales.size();

    std::vector<std::vector<float>> responses(n_scales);
    for (std::size_t s = 0; s < n_scales; ++s) {
        const double sigma_mm = cfg.blob_scales[s];
        const std::array<double, 3> sigma_vox = {sigma_mm / spacing[0], sigma_mm / spacing[1],
                                                 sigma_mm / spacing[2]};
        const std::vector<float> smooth = detail::gaussian_blur(vol.data, dims, sigma_vox);
        std::vector<float>& resp = responses[s];
        resp.assign(count, 0.0f);
        const double norm = sigma_mm * sigma_mm;
        parallel_for(static_cast<std::int64_t>(dims[2]), [&](std::int64_t k) {
            for (int j = 0; j < dims[1]; ++j)
                for (int i = 0; i < dims[0]; ++i) {
                    const int ki = static_cast<int>(k);
                    auto v = [&](int a, int b, int c) {
                        return static_cast<double>(
                            smooth[vol.index(std::clamp(a, 0, dims[0] - 1),
                                             std::clamp(b, 0, dims[1] - 1),
                                             std::clamp(c, 0, dims[2] - 1))]);
                    };
                    const double center = v(i, j, ki);
                    double lap = (v(i - 1, j, ki) - 2.0 * center + v(i + 1, j, ki)) /
                                 (spacing[0] * spacing[0]);
                    lap += (v(i, j - 1, ki) - 2.0 * center + v(i, j + 1, ki)) /
                           (spacing[1] * spacing[1]);
                    lap += (v(i, j, ki - 1) - 2.0 * center + v(i, j, ki + 1)) /
                           (spacing[2] * spacing[2]);
                    resp[vol.index(i, j, ki)] = static_cast<float>(-norm * lap);
                }
        });
    }

    struct Candidate {
        float response;
        std::size_t scale;
        int i, j, k;
    };
    std::vector<Candidate> candidates;
    for (std::size_t s = 0; s < n_scales; ++s) {
        const std::vector<float>& resp = responses[s];
        for (int k = 1; k + 1 < dims[2]; ++k)
            for (int j = 1; j + 1 < dims[1]; ++j)
                for (int i = 1; i + 1 < dims[0]; ++i) {
                    const std::size_t idx = vol.index(i, j, k);
                    const float c = resp[idx];
                    if (!(c > kResponseFloor)) continue;
                    bool is_max = true;
                    for (std::size_t sn = (s > 0 ? s - 1 : s);
                         is_max && sn <= std::min(s + 1, n_scales - 1); ++sn)
                        for (int dk = -1; is_max && dk <= 1; ++dk)
                            for (int dj = -1; is_max && dj <= 1; ++dj)
                                for (int di = -1; is_max && di <= 1; ++di) {
                                    if (sn == s && di == 0 && dj == 0 && dk == 0) continue;
                                    const std::size_t nidx = vol.index(i + di, j + dj, k + dk);
                                    const float nv = responses[sn][nidx];
                                    // flat plateaus (exact float ties happen on
                                    // smooth blobs at coarse grids) keep only
                                    // their canonically first cell
                                    if (nv > c || (nv == c && (sn < s || (sn == s && nidx < idx))))
                                        is_max = false;
                                }
                    if (is_max) candidates.push_back({c, s, i, j, k});
                }
    }

    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.scale != b.scale) return a.scale < b.scale;
        return vol.index(a.i, a.j, a.k) < vol.index(b.i, b.j, b.k);
    });

    struct Accepted {
        WorldPoint pos;
        double sigma;
        std::size_t scale;
    };
    std::vector<Accepted> accepted;
    for (const Candidate& c : candidates) {
        if (accepted.size() == static_cast<std::size_t>(cfg.n_keypoints)) break;
        const WorldPoint p = voxel_to_world(
            vol.affine, {static_cast<double>(c.i), static_cast<double>(c.j),
                         static_cast<double>(c.k)});
        const double sigma = cfg.blob_scales[c.scale];
        bool keep = true;
        for (const Accepted& a : accepted)
            if (distance(p, a.pos) < 2.0 * std::max(sigma, a.sigma)) {
                keep = false;
                break;
            }
        if (keep) accepted.push_back({p, sigma, c.scale});
    }

    if (accepted.size() < static_cast<std::size_t>(cfg.n_keypoints))
        throw InsufficientStructure("detect_blobs: found " + std::to_string(accepted.size()) +
                                    " of " + std::to_string(cfg.n_keypoints) +
                                    " requested keypoints");

    std::vector<std::vector<float>> maps(accepted.size());
    parallel_for(static_cast<std::int64_t>(accepted.size()), [&](std::int64_t mi) {
        const Accepted& a = accepted[static_cast<std::size_t>(mi)];
        const std::vector<float>& resp = responses[a.scale];
        const double support = 2.0 * a.sigma;
        std::vector<float>& map = maps[static_cast<std::size_t>(mi)];

        auto build = [&](const WorldPoint& center) {
            map.assign(count, 0.0f);
            double mass = 0.0, ci = 0.0, cj = 0.0, ck = 0.0;
            std::size_t idx = 0;
            for (int k = 0; k < dims[2]; ++k)
                for (int j = 0; j < dims[1]; ++j)
                    for (int i = 0; i < dims[0]; ++i, ++idx) {
                        const WorldPoint p = voxel_to_world(
                            vol.affine, {static_cast<double>(i), static_cast<double>(j),
                                         static_cast<double>(k)});
                        const double d = distance(p, center);
                        if (d > support) continue;
                        const double r = resp[idx];
                        if (r <= 0.0) continue;
                        const double v = r * std::exp(-0.5 * (d / a.sigma) * (d / a.sigma));
                        map[idx] = static_cast<float>(v);
                        mass += v;
                        ci += v * i;
                        cj += v * j;
                        ck += v * k;
                    }
            if (mass <= 0.0) return center;
            return voxel_to_world(vol.affine, {ci / mass, cj / mass, ck / mass});
        };

        // A window anchored to the quantized extremum truncates the blob
        // asymmetrically and biases the center of mass on coarse grids;
        // re-centering it on the interim mean removes most of that bias.
        WorldPoint center = a.pos;
        for (int pass = 0; pass < 3; ++pass) center = build(center);
    });

    return ActivationStack(std::move(maps), dims, vol.affine);
}

}  // namespace rkm

#endif
