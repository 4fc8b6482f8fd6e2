#ifndef RKM_VOLUME_HPP
#define RKM_VOLUME_HPP

#include <array>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"

namespace rkm {

/// A scalar intensity grid with its voxel->world affine and an optional
/// integer label channel of identical shape.
///
/// Storage order matches the NIfTI file layout: the first dimension varies
/// fastest, i.e. offset(i,j,k) = i + dims[0]*(j + dims[1]*k). Both file
/// formats in volio use the same order, so readers never shuffle bytes;
/// orientation lives solely in the affine.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<float> data;
    WorldAffine affine;
    std::vector<std::int32_t> labels;  // empty, or dims[0]*dims[1]*dims[2] entries

    Volume() = default;

    Volume(std::array<int, 3> d, const WorldAffine& a)
        : dims(d), data(checked_count(d), 0.0f), affine(a) {}

    static std::size_t checked_count(const std::array<int, 3>& d) {
        if (d[0] < 1 || d[1] < 1 || d[2] < 1) throw Error("volume dims must be >= 1 per axis");
        return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
               static_cast<std::size_t>(d[2]);
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }

    float at(int i, int j, int k) const { return data[index(i, j, k)]; }
    float& at(int i, int j, int k) { return data[index(i, j, k)]; }

    bool has_labels() const { return !labels.empty(); }
    std::int32_t label_at(int i, int j, int k) const { return labels[index(i, j, k)]; }

    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    /// Throws unless the shape invariants hold (label channel shape, data size).
    void check() const {
        if (data.size() != voxel_count()) throw Error("volume data size does not match dims");
        if (!labels.empty() && labels.size() != voxel_count())
            throw Error("label channel shape differs from data");
    }
};

inline bool same_dims(const Volume& a, const Volume& b) { return a.dims == b.dims; }

inline void require_same_dims(const Volume& a, const Volume& b, const std::string& who) {
    if (!same_dims(a, b))
        throw DimMismatch(who + ": dims (" + std::to_string(a.dims[0]) + "," +
                          std::to_string(a.dims[1]) + "," + std::to_string(a.dims[2]) + ") vs (" +
                          std::to_string(b.dims[0]) + "," + std::to_string(b.dims[1]) + "," +
                          std::to_string(b.dims[2]) + ")");
}

}  // namespace rkm

#endif
