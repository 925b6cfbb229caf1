#include "protoreg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "protoreg/error.hpp"

namespace protoreg::nifti {
namespace {

#pragma pack(push, 1)
struct Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope, scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

struct GzCloser {
    void operator()(gzFile_s* f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

bool ends_with_gz(const std::filesystem::path& p) {
    return p.extension() == ".gz";
}

int bytes_per_voxel(int16_t datatype) {
    switch (static_cast<DataType>(datatype)) {
        case DataType::kUInt8: return 1;
        case DataType::kInt16: return 2;
        case DataType::kInt32: return 4;
        case DataType::kFloat32: return 4;
        case DataType::kFloat64: return 8;
    }
    return 0;
}

template <typename T>
void widen(const std::vector<char>& raw, double* out, int64_t n) {
    const T* src = reinterpret_cast<const T*>(raw.data());
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<double>(src[i]);
}

}  // namespace

Image read(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw IoError("no such file: " + path.string());
    }
    // gzread passes uncompressed files through unchanged.
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());

    Header h{};
    if (gzread(f.get(), &h, sizeof(h)) != static_cast<int>(sizeof(h))) {
        throw IoError("truncated NIfTI header: " + path.string());
    }
    if (h.sizeof_hdr != 348) {
        throw IoError("not a little-endian NIfTI-1 file: " + path.string());
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0) {
        throw IoError("only single-file NIfTI-1 (magic n+1) is supported: " + path.string());
    }
    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 4 || (ndim == 4 && h.dim[4] != 1)) {
        throw ShapeError("expected a 3D volume in " + path.string());
    }
    const int bpv = bytes_per_voxel(h.datatype);
    if (bpv == 0) {
        throw IoError("unsupported NIfTI datatype " + std::to_string(h.datatype) + " in " + path.string());
    }
    const int64_t w = h.dim[1], hh = h.dim[2], d = h.dim[3];
    if (w < 1 || hh < 1 || d < 1) throw ShapeError("empty dimension in " + path.string());
    const int64_t n = w * hh * d;

    const auto offset = static_cast<int64_t>(h.vox_offset);
    if (offset < 348) throw IoError("bad vox_offset in " + path.string());
    std::vector<char> skip(static_cast<size_t>(offset - 348));
    if (!skip.empty() && gzread(f.get(), skip.data(), static_cast<unsigned>(skip.size())) !=
                             static_cast<int>(skip.size())) {
        throw IoError("truncated NIfTI extension: " + path.string());
    }
    std::vector<char> raw(static_cast<size_t>(n * bpv));
    size_t got = 0;
    while (got < raw.size()) {
        const auto chunk = static_cast<unsigned>(std::min<size_t>(raw.size() - got, 1u << 30));
        const int r = gzread(f.get(), raw.data() + got, chunk);
        if (r <= 0) throw IoError("truncated voxel data: " + path.string());
        got += static_cast<size_t>(r);
    }

    // File order has x fastest, which is a contiguous [D, H, W] tensor.
    auto zyx = torch::empty({d, hh, w}, torch::kFloat64);
    double* out = zyx.data_ptr<double>();
    switch (static_cast<DataType>(h.datatype)) {
        case DataType::kUInt8: widen<uint8_t>(raw, out, n); break;
        case DataType::kInt16: widen<int16_t>(raw, out, n); break;
        case DataType::kInt32: widen<int32_t>(raw, out, n); break;
        case DataType::kFloat32: widen<float>(raw, out, n); break;
        case DataType::kFloat64: widen<double>(raw, out, n); break;
    }
    if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope) &&
        (h.scl_slope != 1.0f || h.scl_inter != 0.0f)) {
        zyx.mul_(static_cast<double>(h.scl_slope)).add_(static_cast<double>(h.scl_inter));
    }
    Image img;
    img.data = zyx.permute({2, 1, 0}).contiguous();
    img.spacing = {std::fabs(h.pixdim[1]), std::fabs(h.pixdim[2]), std::fabs(h.pixdim[3])};
    return img;
}

void write(const std::filesystem::path& path, const torch::Tensor& data, const Spacing3& spacing,
           DataType type) {
    if (!data.defined() || data.dim() != 3) throw ShapeError("NIfTI writer expects a 3D tensor");
    const auto shape = shape_of(data);
    for (auto n : shape) {
        if (n > 32767) throw ShapeError("dimension too large for NIfTI-1: " + to_string(shape));
    }

    Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(shape[0]);
    h.dim[2] = static_cast<int16_t>(shape[1]);
    h.dim[3] = static_cast<int16_t>(shape[2]);
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = static_cast<int16_t>(type);
    h.bitpix = static_cast<int16_t>(8 * bytes_per_voxel(h.datatype));
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(spacing[i]);
    for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // millimetres
    h.qform_code = 1;
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(spacing[0]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_z[2] = static_cast<float>(spacing[2]);
    std::memcpy(h.magic, "n+1\0", 4);

    torch::Tensor zyx = data.permute({2, 1, 0}).contiguous();
    switch (type) {
        case DataType::kUInt8: zyx = zyx.to(torch::kUInt8); break;
        case DataType::kInt16: zyx = zyx.to(torch::kInt16); break;
        case DataType::kInt32: zyx = zyx.to(torch::kInt32); break;
        case DataType::kFloat32: zyx = zyx.to(torch::kFloat32); break;
        case DataType::kFloat64: zyx = zyx.to(torch::kFloat64); break;
    }
    zyx = zyx.contiguous();

    const char* mode = ends_with_gz(path) ? "wb6" : "wbT";
    GzHandle f(gzopen(path.c_str(), mode));
    if (!f) throw IoError("cannot write " + path.string());
    const char extension[4] = {0, 0, 0, 0};
    const auto nbytes = static_cast<size_t>(zyx.numel() * zyx.element_size());
    bool ok = gzwrite(f.get(), &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
              gzwrite(f.get(), extension, 4) == 4;
    const char* bytes = static_cast<const char*>(zyx.data_ptr());
    for (size_t done = 0; ok && done < nbytes;) {
        const auto chunk = static_cast<unsigned>(std::min<size_t>(nbytes - done, 1u << 30));
        ok = gzwrite(f.get(), bytes + done, chunk) == static_cast<int>(chunk);
        done += chunk;
    }
    if (!ok || gzclose(f.release()) != Z_OK) throw IoError("failed writing " + path.string());
}

}  // namespace protoreg::nifti
