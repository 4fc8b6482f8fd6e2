#ifndef RKM_METRICS_HPP
#define RKM_METRICS_HPP

// Registration quality metrics, evaluated on the fixed image's native grid.
// This module never resamples: grids must already agree where voxelwise
// comparison is requested, and Hausdorff distances are taken between
// boundary points mapped to world millimeters through each grid's own affine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/volume.hpp"

namespace rkm {

/// Mean of squared per-voxel intensity differences.
inline double mse(const Volume& a, const Volume& b) {
    require_same_dims(a, b, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.voxel_count());
}

/// Joint intensity span of two volumes; the usual choice for ssim's declared
/// dynamic range.
inline double joint_dynamic_range(const Volume& a, const Volume& b) {
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (float v : a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (float v : b.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return static_cast<double>(hi) - static_cast<double>(lo);
}

inline constexpr int kSsimWindow = 7;

/// Mean local structural similarity over all fully interior 7^3 uniform
/// windows, with stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2 for the
/// declared dynamic range L. Requires every dim >= 7.
inline double ssim(const Volume& a, const Volume& b, double dynamic_range) {
    require_same_dims(a, b, "ssim");
    const auto& dims = a.dims;
    if (dims[0] < kSsimWindow || dims[1] < kSsimWindow || dims[2] < kSsimWindow)
        throw DimMismatch("ssim: every dim must be >= 7 (window size)");

    // Summed-area tables over a, b, a^2, b^2, ab with one voxel of zero padding.
    const std::size_t sd0 = static_cast<std::size_t>(dims[0]) + 1;
    const std::size_t sd1 = static_cast<std::size_t>(dims[1]) + 1;
    const std::size_t sd2 = static_cast<std::size_t>(dims[2]) + 1;
    const std::size_t n = sd0 * sd1 * sd2;
    std::vector<double> sa(n, 0.0), sb(n, 0.0), saa(n, 0.0), sbb(n, 0.0), sab(n, 0.0);
    auto sat = [&](std::size_t i, std::size_t j, std::size_t k) { return i + sd0 * (j + sd1 * k); };
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                const double va = a.at(i, j, k), vb = b.at(i, j, k);
                const std::size_t i1 = static_cast<std::size_t>(i) + 1;
                const std::size_t j1 = static_cast<std::size_t>(j) + 1;
                const std::size_t k1 = static_cast<std::size_t>(k) + 1;
                const std::size_t at = sat(i1, j1, k1);
                const double carry = sa[sat(i, j1, k1)] + sa[sat(i1, j, k1)] + sa[sat(i1, j1, k)] -
                                     sa[sat(i, j, k1)] - sa[sat(i, j1, k)] - sa[sat(i1, j, k)] +
                                     sa[sat(i, j, k)];
                sa[at] = va + carry;
                sb[at] = vb + sb[sat(i, j1, k1)] + sb[sat(i1, j, k1)] + sb[sat(i1, j1, k)] -
                         sb[sat(i, j, k1)] - sb[sat(i, j1, k)] - sb[sat(i1, j, k)] + sb[sat(i, j, k)];
                saa[at] = va * va + saa[sat(i, j1, k1)] + saa[sat(i1, j, k1)] + saa[sat(i1, j1, k)] -
                          saa[sat(i, j, k1)] - saa[sat(i, j1, k)] - saa[sat(i1, j, k)] +
                          saa[sat(i, j, k)];
                sbb[at] = vb * vb + sbb[sat(i, j1, k1)] + sbb[sat(i1, j, k1)] + sbb[sat(i1, j1, k)] -
                          sbb[sat(i, j, k1)] - sbb[sat(i, j1, k)] - sbb[sat(i1, j, k)] +
                          sbb[sat(i, j, k)];
                sab[at] = va * vb + sab[sat(i, j1, k1)] + sab[sat(i1, j, k1)] + sab[sat(i1, j1, k)] -
                          sab[sat(i, j, k1)] - sab[sat(i, j1, k)] - sab[sat(i1, j, k)] +
                          sab[sat(i, j, k)];
            }

    auto window_sum = [&](const std::vector<double>& s, int i, int j, int k) {
        const std::size_t i0 = static_cast<std::size_t>(i), j0 = static_cast<std::size_t>(j),
                          k0 = static_cast<std::size_t>(k);
        const std::size_t i1 = i0 + kSsimWindow, j1 = j0 + kSsimWindow, k1 = k0 + kSsimWindow;
        return s[sat(i1, j1, k1)] - s[sat(i0, j1, k1)] - s[sat(i1, j0, k1)] - s[sat(i1, j1, k0)] +
               s[sat(i0, j0, k1)] + s[sat(i0, j1, k0)] + s[sat(i1, j0, k0)] - s[sat(i0, j0, k0)];
    };

    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
    const double wn = static_cast<double>(kSsimWindow) * kSsimWindow * kSsimWindow;
    double acc = 0.0;
    std::int64_t windows = 0;
    for (int k = 0; k + kSsimWindow <= dims[2]; ++k)
        for (int j = 0; j + kSsimWindow <= dims[1]; ++j)
            for (int i = 0; i + kSsimWindow <= dims[0]; ++i) {
                const double mu_a = window_sum(sa, i, j, k) / wn;
                const double mu_b = window_sum(sb, i, j, k) / wn;
                const double var_a = window_sum(saa, i, j, k) / wn - mu_a * mu_a;
                const double var_b = window_sum(sbb, i, j, k) / wn - mu_b * mu_b;
                const double cov = window_sum(sab, i, j, k) / wn - mu_a * mu_b;
                acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++windows;
            }
    return acc / static_cast<double>(windows);
}

inline constexpr double kDiceEpsilon = 1e-6;

/// Soft Dice between two probability grids of equal size:
/// (2 sum(a*b) + eps) / (sum(a) + sum(b) + eps).
inline double soft_dice_grids(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw DimMismatch("soft_dice_grids: size mismatch");
    double inter = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        mass += static_cast<double>(a[i]) + static_cast<double>(b[i]);
    }
    return (2.0 * inter + kDiceEpsilon) / (mass + kDiceEpsilon);
}

/// Per-label soft Dice of two label grids (indicator form of the soft score).
/// Throws UnknownLabel when a requested label appears in neither grid.
inline std::map<int, double> soft_dice(const Volume& a, const Volume& b,
                                       const std::vector<int>& labels) {
    require_same_dims(a, b, "soft_dice");
    if (!a.has_labels() || !b.has_labels()) throw MissingLabels("soft_dice: label grids required");
    std::map<int, double> out;
    for (int label : labels) {
        double inter = 0.0, mass = 0.0;
        bool seen = false;
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            const bool ia = a.labels[i] == label, ib = b.labels[i] == label;
            seen = seen || ia || ib;
            inter += (ia && ib) ? 1.0 : 0.0;
            mass += (ia ? 1.0 : 0.0) + (ib ? 1.0 : 0.0);
        }
        if (!seen)
            throw UnknownLabel("soft_dice: label " + std::to_string(label) +
                               " appears in neither grid");
        out[label] = (2.0 * inter + kDiceEpsilon) / (mass + kDiceEpsilon);
    }
    return out;
}

namespace detail {

/// Mask voxels with at least one face-adjacent background neighbor; voxels on
/// the grid edge count as boundary. Returned in world millimeters.
inline std::vector<WorldPoint> boundary_world_points(const Volume& vol, int label) {
    std::vector<WorldPoint> pts;
    const auto& d = vol.dims;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (vol.label_at(i, j, k) != label) continue;
                auto bg = [&](int a, int b, int c) {
                    return !vol.in_bounds(a, b, c) || vol.label_at(a, b, c) != label;
                };
                if (bg(i - 1, j, k) || bg(i + 1, j, k) || bg(i, j - 1, k) || bg(i, j + 1, k) ||
                    bg(i, j, k - 1) || bg(i, j, k + 1))
                    pts.push_back(voxel_to_world(vol.affine, {static_cast<double>(i),
                                                              static_cast<double>(j),
                                                              static_cast<double>(k)}));
            }
    return pts;
}

inline double directed_hausdorff(const std::vector<WorldPoint>& from,
                                 const std::vector<WorldPoint>& to, double percentile) {
    std::vector<double> dists;
    dists.reserve(from.size());
    for (const WorldPoint& p : from) {
        double best = std::numeric_limits<double>::max();
        for (const WorldPoint& q : to) {
            const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        dists.push_back(std::sqrt(best));
    }
    std::sort(dists.begin(), dists.end());
    if (percentile >= 100.0) return dists.back();
    const double pos = percentile / 100.0 * (static_cast<double>(dists.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, dists.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return (1.0 - f) * dists[lo] + f * dists[hi];
}

}  // namespace detail

/// Symmetric Hausdorff distance in world millimeters between per-label mask
/// boundaries, exact maximum by default (percentile < 100 gives the robust
/// variant). The grids may have different dims and affines. Throws EmptyMask
/// when a requested label is empty in either grid.
inline std::map<int, double> hausdorff_mm(const Volume& a, const Volume& b,
                                          const std::vector<int>& labels,
                                          double percentile = 100.0) {
    if (!a.has_labels() || !b.has_labels())
        throw MissingLabels("hausdorff_mm: label grids required");
    std::map<int, double> out;
    for (int label : labels) {
        const std::vector<WorldPoint> pa = detail::boundary_world_points(a, label);
        const std::vector<WorldPoint> pb = detail::boundary_world_points(b, label);
        if (pa.empty() || pb.empty())
            throw EmptyMask("hausdorff_mm: label " + std::to_string(label) +
                            " has an empty mask");
        out[label] = std::max(detail::directed_hausdorff(pa, pb, percentile),
                              detail::directed_hausdorff(pb, pa, percentile));
    }
    return out;
}

/// Metric bundle for one registered pair. Serializes to the flat
/// `metric.label = value` text format.
struct MetricReport {
    std::optional<double> mse;
    std::optional<double> ssim;
    std::map<int, double> dice;
    std::optional<double> dice_mean;
    std::map<int, double> hausdorff;
    std::optional<double> hausdorff_mean;

    std::string serialize() const {
        std::ostringstream os;
        os.precision(17);
        if (mse) os << "mse = " << *mse << "\n";
        if (ssim) os << "ssim = " << *ssim << "\n";
        for (const auto& [label, v] : dice) os << "dice." << label << " = " << v << "\n";
        if (dice_mean) os << "dice.mean = " << *dice_mean << "\n";
        for (const auto& [label, v] : hausdorff) os << "hd." << label << " = " << v << "\n";
        if (hausdorff_mean) os << "hd.mean = " << *hausdorff_mean << "\n";
        return os.str();
    }

    static MetricReport parse(const std::string& text) {
        MetricReport r;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string key, eq;
            double value = 0.0;
            if (!(ls >> key >> eq >> value) || eq != "=")
                throw ParseError(lineno, 1, "expected `key = value`");
            if (key == "mse")
                r.mse = value;
            else if (key == "ssim")
                r.ssim = value;
            else if (key == "dice.mean")
                r.dice_mean = value;
            else if (key == "hd.mean")
                r.hausdorff_mean = value;
            else if (key.rfind("dice.", 0) == 0)
                r.dice[std::stoi(key.substr(5))] = value;
            else if (key.rfind("hd.", 0) == 0)
                r.hausdorff[std::stoi(key.substr(3))] = value;
            else
                throw ParseError(lineno, 1, "unknown metric key `" + key + "`");
        }
        return r;
    }
};

/// Convenience bundle: MSE and SSIM always; Dice and Hausdorff when both
/// volumes carry labels (over the given labels, or the sorted union of
/// nonzero labels when empty).
inline MetricReport evaluate_pair(const Volume& a, const Volume& b, std::vector<int> labels = {}) {
    MetricReport r;
    r.mse = mse(a, b);
    r.ssim = ssim(a, b, joint_dynamic_range(a, b));
    if (a.has_labels() && b.has_labels()) {
        if (labels.empty()) {
            std::vector<int> seen;
            for (auto v : a.labels)
                if (v != 0) seen.push_back(v);
            for (auto v : b.labels)
                if (v != 0) seen.push_back(v);
            std::sort(seen.begin(), seen.end());
            seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
            labels = seen;
        }
        if (!labels.empty()) {
            r.dice = soft_dice(a, b, labels);
            r.hausdorff = hausdorff_mm(a, b, labels);
            double dsum = 0.0, hsum = 0.0;
            for (const auto& [_, v] : r.dice) dsum += v;
            for (const auto& [_, v] : r.hausdorff) hsum += v;
            r.dice_mean = dsum / static_cast<double>(r.dice.size());
            r.hausdorff_mean = hsum / static_cast<double>(r.hausdorff.size());
        }
    }
    return r;
}

}  // namespace rkm

#endif
