#ifndef RKM_VOLIO_HPP
#define RKM_VOLIO_HPP

// Volume I/O.
//
// Formats:
//  * NIfTI-1 single-file subset (.nii / .nii.gz): scalar 3-D volumes,
//    datatypes uint8 / int16 / int32 / float32 / float64, little-endian.
//    Intensities are converted to float32 with scl_slope / scl_inter applied
//    (slope 0 means 1). The affine is the sform when sform_code > 0, else the
//    qform via quaternion expansion, else diag(pixdim). Affines are used as
//    stored: no RAS/LPS canonicalization, no axis shuffling.
//  * Raw interchange (.rkm.txt metadata + .rkm.bin payload): dims, a 4x4
//    row-major affine, a datatype, and a little-endian array in memory order
//    (first dim fastest).
//  * Activation stacks: "RKMACT1\0" magic, four u32 dims (N, then the three
//    grid dims), 8 reserved zero bytes, then N float32 maps in memory order.
//  * Keypoint lists and transform parameter text files for the CLI.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/keypoints.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volume.hpp"

namespace rkm {

namespace nifti {

#pragma pack(push, 1)
struct Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

enum Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

inline int bytes_per_voxel(std::int16_t datatype) {
    switch (datatype) {
        case kUint8: return 1;
        case kInt16: return 2;
        case kInt32: return 4;
        case kFloat32: return 4;
        case kFloat64: return 8;
        default: return 0;
    }
}

/// Quaternion expansion of the qform per the NIfTI-1 convention.
inline WorldAffine qform_affine(const Header& h) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a2 = 1.0 - (b * b + c * c + d * d);
    const double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
    const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
    const double sx = h.pixdim[1], sy = h.pixdim[2], sz = qfac * h.pixdim[3];
    return WorldAffine::from_rows({(a * a + b * b - c * c - d * d) * sx,
                                   (2 * b * c - 2 * a * d) * sy,
                                   (2 * b * d + 2 * a * c) * sz,
                                   h.qoffset_x,
                                   (2 * b * c + 2 * a * d) * sx,
                                   (a * a + c * c - b * b - d * d) * sy,
                                   (2 * c * d - 2 * a * b) * sz,
                                   h.qoffset_y,
                                   (2 * b * d - 2 * a * c) * sx,
                                   (2 * c * d + 2 * a * b) * sy,
                                   (a * a + d * d - b * b - c * c) * sz,
                                   h.qoffset_z});
}

}  // namespace nifti

namespace detail {

/// Whole-file read through zlib; transparently inflates gzip and passes
/// plain files through.
inline std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoFailure("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char chunk[1 << 16];
    int got = 0;
    while ((got = gzread(f, chunk, sizeof(chunk))) > 0)
        out.insert(out.end(), chunk, chunk + got);
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw IoFailure("decompression failed for " + path);
    return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline void write_file_maybe_gz(const std::string& path, const void* bytes, std::size_t count) {
    if (ends_with(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw IoFailure("cannot open " + path + " for writing");
        const char* p = static_cast<const char*>(bytes);
        std::size_t left = count;
        while (left > 0) {
            const unsigned step = static_cast<unsigned>(std::min<std::size_t>(left, 1u << 28));
            if (gzwrite(f, p, step) != static_cast<int>(step)) {
                gzclose(f);
                throw IoFailure("write failed for " + path);
            }
            p += step;
            left -= step;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoFailure("cannot open " + path + " for writing");
        f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(count));
        if (!f) throw IoFailure("write failed for " + path);
    }
}

}  // namespace detail

/// Reads a single-file NIfTI-1 volume (.nii or .nii.gz).
inline Volume read_nifti(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::read_file_maybe_gz(path);
    if (bytes.size() < sizeof(nifti::Header))
        throw TruncatedData(path + ": file shorter than the 348-byte header");
    nifti::Header h{};
    std::memcpy(&h, bytes.data(), sizeof(h));

    if (h.sizeof_hdr != 348)
        throw BadMagic(path + ": sizeof_hdr is " + std::to_string(h.sizeof_hdr) +
                       ", expected 348 (NIfTI-1, little-endian)");
    if (std::memcmp(h.magic, "n+1", 4) != 0)
        throw BadMagic(path + ": magic is not \"n+1\\0\" (single-file NIfTI-1)");
    if (h.dim[0] < 3)
        throw UnsupportedDatatype(path + ": dim[0] = " + std::to_string(h.dim[0]) +
                                  ", need 3 spatial dims");
    for (int d = 4; d <= h.dim[0] && d < 8; ++d)
        if (h.dim[d] > 1)
            throw UnsupportedDatatype(path + ": dim[" + std::to_string(d) +
                                      "] > 1 (time series / multi-frame unsupported)");
    const int bpv = nifti::bytes_per_voxel(h.datatype);
    if (bpv == 0)
        throw UnsupportedDatatype(path + ": datatype code " + std::to_string(h.datatype));

    const std::array<int, 3> dims = {h.dim[1], h.dim[2], h.dim[3]};
    WorldAffine affine;
    if (h.sform_code > 0) {
        affine = WorldAffine::from_rows(
            {h.srow_x[0], h.srow_x[1], h.srow_x[2], h.srow_x[3], h.srow_y[0], h.srow_y[1],
             h.srow_y[2], h.srow_y[3], h.srow_z[0], h.srow_z[1], h.srow_z[2], h.srow_z[3]});
    } else if (h.qform_code > 0) {
        affine = nifti::qform_affine(h);
    } else {
        affine = WorldAffine::scaling(h.pixdim[1] != 0.0f ? h.pixdim[1] : 1.0,
                                      h.pixdim[2] != 0.0f ? h.pixdim[2] : 1.0,
                                      h.pixdim[3] != 0.0f ? h.pixdim[3] : 1.0);
    }

    Volume vol(dims, affine);
    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    const std::size_t need = vol.voxel_count() * static_cast<std::size_t>(bpv);
    if (offset < sizeof(nifti::Header) || bytes.size() < offset + need)
        throw TruncatedData(path + ": data: have " + std::to_string(bytes.size()) +
                            " bytes, need " + std::to_string(offset + need));

    const double slope = h.scl_slope == 0.0f ? 1.0 : h.scl_slope;
    const double inter = h.scl_inter;
    const unsigned char* src = bytes.data() + offset;
    for (std::size_t i = 0; i < vol.voxel_count(); ++i) {
        double raw = 0.0;
        switch (h.datatype) {
            case nifti::kUint8: raw = src[i]; break;
            case nifti::kInt16: {
                std::int16_t v;
                std::memcpy(&v, src + i * 2, 2);
                raw = v;
                break;
            }
            case nifti::kInt32: {
                std::int32_t v;
                std::memcpy(&v, src + i * 4, 4);
                raw = v;
                break;
            }
            case nifti::kFloat32: {
                float v;
                std::memcpy(&v, src + i * 4, 4);
                raw = v;
                break;
            }
            case nifti::kFloat64: {
                double v;
                std::memcpy(&v, src + i * 8, 8);
                raw = v;
                break;
            }
        }
        vol.data[i] = static_cast<float>(slope * raw + inter);
    }
    return vol;
}

namespace detail {

inline nifti::Header make_header(const Volume& vol, std::int16_t datatype) {
    nifti::Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(vol.dims[0]);
    h.dim[2] = static_cast<std::int16_t>(vol.dims[1]);
    h.dim[3] = static_cast<std::int16_t>(vol.dims[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = static_cast<std::int16_t>(8 * nifti::bytes_per_voxel(datatype));
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(vol.affine.spacing(a));
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimeters
    h.sform_code = 2;
    h.qform_code = 0;
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = static_cast<float>(vol.affine.at(0, c));
        h.srow_y[c] = static_cast<float>(vol.affine.at(1, c));
        h.srow_z[c] = static_cast<float>(vol.affine.at(2, c));
    }
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

inline void write_nifti_bytes(const std::string& path, const nifti::Header& h, const void* payload,
                              std::size_t payload_bytes) {
    std::vector<unsigned char> out(sizeof(h) + 4 + payload_bytes, 0);
    std::memcpy(out.data(), &h, sizeof(h));
    // 4 zero bytes: no header extensions
    std::memcpy(out.data() + sizeof(h) + 4, payload, payload_bytes);
    write_file_maybe_gz(path, out.data(), out.size());
}

}  // namespace detail

/// Writes intensities as float32, sform code 2. read_nifti(write_nifti(v))
/// reproduces the data bit-exactly; the affine survives to float32 precision.
inline void write_nifti(const Volume& vol, const std::string& path) {
    vol.check();
    detail::write_nifti_bytes(path, detail::make_header(vol, nifti::kFloat32), vol.data.data(),
                              vol.data.size() * sizeof(float));
}

/// Writes the label channel as a uint8 NIfTI volume (labels must fit 0..255).
inline void write_nifti_labels(const Volume& vol, const std::string& path) {
    vol.check();
    if (!vol.has_labels()) throw MissingLabels("write_nifti_labels: volume has no label channel");
    std::vector<unsigned char> bytes(vol.labels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const std::int32_t v = vol.labels[i];
        if (v < 0 || v > 255) throw Error("write_nifti_labels: label " + std::to_string(v) +
                                          " does not fit uint8");
        bytes[i] = static_cast<unsigned char>(v);
    }
    detail::write_nifti_bytes(path, detail::make_header(vol, nifti::kUint8), bytes.data(),
                              bytes.size());
}

/// Rounds a volume's intensities into a label channel on a copy of `target`.
/// Intended for label files read back through read_nifti/read_raw.
inline void attach_labels(Volume& target, const Volume& label_volume) {
    require_same_dims(target, label_volume, "attach_labels");
    target.labels.resize(target.voxel_count());
    for (std::size_t i = 0; i < target.labels.size(); ++i)
        target.labels[i] = static_cast<std::int32_t>(std::llround(label_volume.data[i]));
}

// -- raw interchange ----------------------------------------------------------

enum class RawDatatype { Float32, Int32, Uint8 };

namespace detail {

/// Line/column-tracking token reader for the small text formats.
class TextCursor {
  public:
    explicit TextCursor(const std::string& text) : text_(text) {}

    /// Next whitespace-separated token; returns false at end of input.
    bool next(std::string& token) {
        token.clear();
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == '#') {  // comment to end of line
                while (pos_ < text_.size() && text_[pos_] != '\n') advance();
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                advance();
                continue;
            }
            break;
        }
        if (pos_ >= text_.size()) return false;
        token_line_ = line_;
        token_col_ = col_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            token += text_[pos_];
            advance();
        }
        return true;
    }

    std::string expect(const std::string& what) {
        std::string token;
        if (!next(token)) throw ParseError(line_, col_, "expected " + what + ", got end of file");
        return token;
    }

    double expect_real(const std::string& what) {
        const std::string token = expect(what);
        try {
            std::size_t used = 0;
            const double v = std::stod(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            return v;
        } catch (const std::exception&) {
            throw ParseError(token_line_, token_col_, "expected " + what + ", got `" + token + "`");
        }
    }

    long expect_int(const std::string& what) {
        const std::string token = expect(what);
        try {
            std::size_t used = 0;
            const long v = std::stol(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            return v;
        } catch (const std::exception&) {
            throw ParseError(token_line_, token_col_, "expected " + what + ", got `" + token + "`");
        }
    }

    void fail(const std::string& msg) const { throw ParseError(token_line_, token_col_, msg); }

    int line() const { return token_line_; }
    int column() const { return token_col_; }

  private:
    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
    int token_line_ = 1;
    int token_col_ = 1;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFailure("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoFailure("cannot open " + path + " for writing");
    f << text;
    if (!f) throw IoFailure("write failed for " + path);
}

}  // namespace detail

/// Reads the .rkm.txt / .rkm.bin pair. The metadata grammar is
///
///   rkmvol 1
///   dims d0 d1 d2
///   datatype float32|int32|uint8
///   affine
///   <16 reals, row-major, last row 0 0 0 1>
///
/// with `#` comments. The payload is a little-endian array in memory order
/// (first dim fastest).
inline Volume read_raw(const std::string& meta_path, const std::string& data_path) {
    const std::string text = detail::read_text_file(meta_path);
    detail::TextCursor cur(text);

    if (cur.expect("`rkmvol`") != "rkmvol") cur.fail("expected `rkmvol` magic");
    if (cur.expect_int("format version") != 1) cur.fail("unsupported format version");
    if (cur.expect("`dims`") != "dims") cur.fail("expected `dims`");
    std::array<int, 3> dims{};
    for (int a = 0; a < 3; ++a) {
        const long d = cur.expect_int("dimension");
        if (d < 1) cur.fail("dims must be >= 1");
        dims[static_cast<std::size_t>(a)] = static_cast<int>(d);
    }
    if (cur.expect("`datatype`") != "datatype") cur.fail("expected `datatype`");
    const std::string dtype = cur.expect("datatype name");
    RawDatatype datatype;
    if (dtype == "float32")
        datatype = RawDatatype::Float32;
    else if (dtype == "int32")
        datatype = RawDatatype::Int32;
    else if (dtype == "uint8")
        datatype = RawDatatype::Uint8;
    else {
        cur.fail("unknown datatype `" + dtype + "`");
        return Volume{};  // unreachable
    }
    if (cur.expect("`affine`") != "affine") cur.fail("expected `affine`");
    std::array<double, 16> m{};
    for (int i = 0; i < 16; ++i) m[static_cast<std::size_t>(i)] = cur.expect_real("affine entry");
    if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0)
        cur.fail("affine last row must be `0 0 0 1`");
    std::string extra;
    if (cur.next(extra)) cur.fail("unexpected trailing token `" + extra + "`");

    const WorldAffine affine = WorldAffine::from_rows(
        {m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8], m[9], m[10], m[11]});
    Volume vol(dims, affine);

    std::ifstream f(data_path, std::ios::binary);
    if (!f) throw IoFailure("cannot open " + data_path);
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(f)),
                                       std::istreambuf_iterator<char>());
    const int bpv = datatype == RawDatatype::Uint8 ? 1 : 4;
    const std::size_t need = vol.voxel_count() * static_cast<std::size_t>(bpv);
    if (payload.size() != need)
        throw TruncatedData(data_path + ": have " + std::to_string(payload.size()) +
                            " bytes, need " + std::to_string(need));
    for (std::size_t i = 0; i < vol.voxel_count(); ++i) {
        switch (datatype) {
            case RawDatatype::Float32: {
                float v;
                std::memcpy(&v, payload.data() + i * 4, 4);
                vol.data[i] = v;
                break;
            }
            case RawDatatype::Int32: {
                std::int32_t v;
                std::memcpy(&v, payload.data() + i * 4, 4);
                vol.data[i] = static_cast<float>(v);
                break;
            }
            case RawDatatype::Uint8: vol.data[i] = payload[i]; break;
        }
    }
    return vol;
}

inline void write_raw(const Volume& vol, const std::string& meta_path,
                      const std::string& data_path) {
    vol.check();
    std::ostringstream os;
    os.precision(17);
    os << "rkmvol 1\n";
    os << "dims " << vol.dims[0] << " " << vol.dims[1] << " " << vol.dims[2] << "\n";
    os << "datatype float32\n";
    os << "affine\n";
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) os << vol.affine.at(r, c) << (c == 3 ? "\n" : " ");
    }
    detail::write_text_file(meta_path, os.str());
    detail::write_file_maybe_gz(data_path, vol.data.data(), vol.data.size() * sizeof(float));
}

// -- activation stacks ---------------------------------------------------------

inline constexpr char kActivationMagic[8] = {'R', 'K', 'M', 'A', 'C', 'T', '1', '\0'};

/// Raw float32 stack with a 32-byte header: magic, u32 dims (N, then grid
/// dims), 8 reserved zero bytes. The affine comes from the owning volume.
inline ActivationStack read_activation_stack(const std::string& path, const WorldAffine& affine) {
    const std::vector<unsigned char> bytes = detail::read_file_maybe_gz(path);
    if (bytes.size() < 32) throw TruncatedData(path + ": shorter than the 32-byte header");
    if (std::memcmp(bytes.data(), kActivationMagic, 8) != 0)
        throw BadMagic(path + ": missing RKMACT1 magic");
    std::uint32_t u[4];
    std::memcpy(u, bytes.data() + 8, 16);
    const std::size_t n = u[0];
    const std::array<int, 3> dims = {static_cast<int>(u[1]), static_cast<int>(u[2]),
                                     static_cast<int>(u[3])};
    if (n == 0 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
        throw BadMagic(path + ": invalid dims in header");
    const std::size_t per_map = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const std::size_t need = 32 + n * per_map * sizeof(float);
    if (bytes.size() < need)
        throw TruncatedData(path + ": have " + std::to_string(bytes.size()) + " bytes, need " +
                            std::to_string(need));
    std::vector<std::vector<float>> maps(n);
    for (std::size_t m = 0; m < n; ++m) {
        maps[m].resize(per_map);
        std::memcpy(maps[m].data(), bytes.data() + 32 + m * per_map * sizeof(float),
                    per_map * sizeof(float));
    }
    return ActivationStack(std::move(maps), dims, affine);
}

inline void write_activation_stack(const ActivationStack& stack, const std::string& path) {
    std::vector<unsigned char> out(32, 0);
    std::memcpy(out.data(), kActivationMagic, 8);
    const std::uint32_t u[4] = {static_cast<std::uint32_t>(stack.n_maps()),
                                static_cast<std::uint32_t>(stack.dims()[0]),
                                static_cast<std::uint32_t>(stack.dims()[1]),
                                static_cast<std::uint32_t>(stack.dims()[2])};
    std::memcpy(out.data() + 8, u, 16);
    for (std::size_t m = 0; m < stack.n_maps(); ++m) {
        const auto& map = stack.map(m);
        const std::size_t at = out.size();
        out.resize(at + map.size() * sizeof(float));
        std::memcpy(out.data() + at, map.data(), map.size() * sizeof(float));
    }
    detail::write_file_maybe_gz(path, out.data(), out.size());
}

// -- keypoint lists -------------------------------------------------------------

/// One keypoint per line: `x_mm y_mm z_mm confidence`.
inline void write_keypoints(const KeypointSet& kps, const std::string& path) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < kps.size(); ++i) {
        const WorldPoint& p = kps.point(i);
        os << p.x << " " << p.y << " " << p.z << " " << kps.confidence(i) << "\n";
    }
    detail::write_text_file(path, os.str());
}

inline KeypointSet read_keypoints(const std::string& path) {
    const std::string text = detail::read_text_file(path);
    detail::TextCursor cur(text);
    std::vector<WorldPoint> points;
    std::vector<double> confidences;
    std::string token;
    while (cur.next(token)) {
        WorldPoint p;
        try {
            std::size_t used = 0;
            p.x = std::stod(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            cur.fail("expected keypoint x coordinate, got `" + token + "`");
        }
        p.y = cur.expect_real("keypoint y coordinate");
        p.z = cur.expect_real("keypoint z coordinate");
        const double c = cur.expect_real("keypoint confidence");
        points.push_back(p);
        confidences.push_back(c);
    }
    if (points.empty()) throw ParseError(1, 1, path + ": no keypoints found");
    return KeypointSet(std::move(points), std::move(confidences));
}

// -- transform parameter files ---------------------------------------------------

/// Registration solutions on disk. Affine/rigid files hold 16 reals
/// (row-major, the moving->fixed map); TPS files hold the pull-back spline
/// that warping applies directly.
struct TransformFile {
    enum class Kind { Affine, Tps };
    Kind kind = Kind::Affine;
    AffineTransform affine;
    TpsTransform tps;
};

inline void write_affine_transform(const AffineTransform& t, const std::string& path) {
    std::ostringstream os;
    os.precision(17);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) os << t.matrix.at(r, c) << (c == 3 ? "\n" : " ");
    detail::write_text_file(path, os.str());
}

inline void write_tps_transform(const TpsTransform& t, const std::string& path) {
    std::ostringstream os;
    os.precision(17);
    os << "tps\n";
    os << "lambda " << t.lambda << "\n";
    os << "n " << t.control_points.size() << "\n";
    os << "affine\n";
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) os << t.affine_part.at(r, c) << (c == 3 ? "\n" : " ");
    os << "control\n";
    for (const auto& p : t.control_points) os << p.x << " " << p.y << " " << p.z << "\n";
    os << "coefficients\n";
    for (const auto& w : t.warp_coefficients) os << w[0] << " " << w[1] << " " << w[2] << "\n";
    detail::write_text_file(path, os.str());
}

inline TransformFile read_transform_file(const std::string& path) {
    const std::string text = detail::read_text_file(path);
    detail::TextCursor cur(text);
    TransformFile out;

    std::string first;
    if (!cur.next(first)) throw ParseError(1, 1, path + ": empty transform file");

    if (first == "tps") {
        out.kind = TransformFile::Kind::Tps;
        if (cur.expect("`lambda`") != "lambda") cur.fail("expected `lambda`");
        out.tps.lambda = cur.expect_real("lambda value");
        if (cur.expect("`n`") != "n") cur.fail("expected `n`");
        const long n = cur.expect_int("control point count");
        if (n < 1) cur.fail("control point count must be >= 1");
        if (cur.expect("`affine`") != "affine") cur.fail("expected `affine`");
        Mat4 m;
        for (int i = 0; i < 16; ++i) m.m[static_cast<std::size_t>(i)] = cur.expect_real("affine entry");
        out.tps.affine_part = m;
        if (cur.expect("`control`") != "control") cur.fail("expected `control`");
        out.tps.control_points.resize(static_cast<std::size_t>(n));
        for (auto& p : out.tps.control_points) {
            p.x = cur.expect_real("control x");
            p.y = cur.expect_real("control y");
            p.z = cur.expect_real("control z");
        }
        if (cur.expect("`coefficients`") != "coefficients") cur.fail("expected `coefficients`");
        out.tps.warp_coefficients.resize(static_cast<std::size_t>(n));
        for (auto& w : out.tps.warp_coefficients) {
            w[0] = cur.expect_real("coefficient x");
            w[1] = cur.expect_real("coefficient y");
            w[2] = cur.expect_real("coefficient z");
        }
    } else {
        Mat4 m;
        try {
            std::size_t used = 0;
            m.m[0] = std::stod(first, &used);
            if (used != first.size()) throw std::invalid_argument(first);
        } catch (const std::exception&) {
            cur.fail("expected `tps` or an affine entry, got `" + first + "`");
        }
        for (int i = 1; i < 16; ++i) m.m[static_cast<std::size_t>(i)] = cur.expect_real("affine entry");
        if (m.at(3, 0) != 0.0 || m.at(3, 1) != 0.0 || m.at(3, 2) != 0.0 || m.at(3, 3) != 1.0)
            cur.fail("affine last row must be `0 0 0 1`");
        out.affine = AffineTransform(m);
    }
    std::string extra;
    if (cur.next(extra)) cur.fail("unexpected trailing token `" + extra + "`");
    return out;
}

}  // namespace rkm

#endif
