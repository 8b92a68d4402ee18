#include "cpga/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

#include <png.h>

#include "cpga/rng.hpp"

namespace cpga::data {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

Tensor load_image(const fs::path& path) {
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) {
        throw IoError("load_image: cannot open " + path.string());
    }
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw IoError("load_image: not a PNG file: " + path.string());
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_image: libpng init failed for " + path.string());
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_image: decode error in " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize every supported layout to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_image: unsupported channel layout in " + path.string());
    }

    pixels.resize(static_cast<size_t>(h) * w * 3);
    row_ptrs.resize(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) {
        row_ptrs[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * w * 3;
    }
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out = Tensor::zeros({3, h, w});
    float* po = out.data();
    const int plane = h * w;
    for (int y = 0; y < h; ++y) {
        const png_byte* row = pixels.data() + static_cast<size_t>(y) * w * 3;
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            po[i] = static_cast<float>(row[3 * x]) / 255.0f;
            po[plane + i] = static_cast<float>(row[3 * x + 1]) / 255.0f;
            po[2 * plane + i] = static_cast<float>(row[3 * x + 2]) / 255.0f;
        }
    }
    return out;
}

void save_image(const Tensor& img, const fs::path& path) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw ShapeError("save_image: expected [1,H,W] or [3,H,W], got " + shape_str(img.shape()));
    }
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const int plane = h * w;

    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) {
        throw IoError("save_image: cannot open " + path.string() + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_image: libpng init failed for " + path.string());
    }
    std::vector<png_byte> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_image: encode error for " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const float* p = img.data();
    row.resize(static_cast<size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                const float v = std::clamp(p[ch * plane + y * w + x], 0.0f, 1.0f);
                row[static_cast<size_t>(x) * c + ch] =
                    static_cast<png_byte>(std::floor(v * 255.0f + 0.5f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

DatasetIndex scan_dataset(const fs::path& root, const DatasetLayout& layout,
                          const std::string& split) {
    if (!fs::exists(root)) {
        throw IoError("scan_dataset: root does not exist: " + root.string());
    }
    const fs::path low_dir = root / layout.low_dir;
    const fs::path gt_dir = root / layout.gt_dir;
    if (!fs::is_directory(low_dir) || !fs::is_directory(gt_dir)) {
        throw IoError("scan_dataset: expected subdirectories '" + layout.low_dir + "' and '" +
                      layout.gt_dir + "' under " + root.string());
    }

    auto collect = [](const fs::path& dir) {
        std::map<std::string, fs::path> stems;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".png") {
                stems.emplace(e.path().stem().string(), e.path());
            }
        }
        return stems;
    };
    const auto low = collect(low_dir);
    const auto gt = collect(gt_dir);

    DatasetIndex index;
    index.root = root;
    index.split = split;
    for (const auto& [stem, path] : low) {
        auto it = gt.find(stem);
        if (it == gt.end()) {
            index.unmatched.push_back(stem);
        } else {
            index.entries.push_back({path, it->second, stem});
        }
    }
    for (const auto& [stem, path] : gt) {
        if (low.find(stem) == low.end()) {
            index.unmatched.push_back(stem);
        }
    }
    std::sort(index.entries.begin(), index.entries.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    std::sort(index.unmatched.begin(), index.unmatched.end());

    if (index.entries.empty()) {
        std::string detail;
        for (const auto& s : index.unmatched) {
            detail += detail.empty() ? s : (", " + s);
        }
        throw IoError("scan_dataset: no matched pairs under " + root.string() +
                      (detail.empty() ? "" : "; unmatched stems: " + detail));
    }
    return index;
}

PairedSample load_pair(const DatasetIndex::Entry& entry) {
    PairedSample s;
    s.low = load_image(entry.low_path);
    s.gt = load_image(entry.gt_path);
    s.id = entry.id;
    if (s.low.shape() != s.gt.shape()) {
        throw IoError("load_pair: dimension mismatch for id '" + entry.id + "'");
    }
    return s;
}

namespace {

Tensor crop(const Tensor& img, int y0, int x0, int size) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out = Tensor::zeros({c, size, size});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < size; ++y) {
            const float* src = img.data() + (static_cast<size_t>(ch) * h + y0 + y) * w + x0;
            float* dst = out.data() + (static_cast<size_t>(ch) * size + y) * size;
            std::copy_n(src, size, dst);
        }
    }
    return out;
}

Tensor hflip(const Tensor& img) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out = Tensor::zeros({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const float* src = img.data() + (static_cast<size_t>(ch) * h + y) * w;
            float* dst = out.data() + (static_cast<size_t>(ch) * h + y) * w;
            for (int x = 0; x < w; ++x) {
                dst[x] = src[w - 1 - x];
            }
        }
    }
    return out;
}

} // namespace

PairedSample random_patch_pair(const PairedSample& s, int size, uint64_t seed) {
    const int h = s.low.dim(1), w = s.low.dim(2);
    if (size < 1 || size > h || size > w) {
        throw ShapeError("random_patch_pair: crop size " + std::to_string(size) +
                         " exceeds image " + shape_str(s.low.shape()));
    }
    Rng rng(seed);
    const int y0 = h == size ? 0 : rng.uniform_int(h - size + 1);
    const int x0 = w == size ? 0 : rng.uniform_int(w - size + 1);
    return {crop(s.low, y0, x0, size), crop(s.gt, y0, x0, size), s.id};
}

PairedSample augment(const PairedSample& s, uint64_t seed) {
    Rng rng(seed);
    if (rng.uniform() < 0.5f) {
        return {hflip(s.low), hflip(s.gt), s.id};
    }
    return s;
}

} // namespace cpga::data
