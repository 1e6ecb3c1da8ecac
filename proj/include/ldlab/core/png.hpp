#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldlab {

struct PngImage {
    int w = 0, h = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

struct PngIndexed {
    int w = 0, h = 0;
    std::vector<std::uint8_t> idx;  // 1 byte per pixel
    int palette_size = 0;
};

namespace detail {
struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};
}  // namespace detail

inline void write_png_rgb(const std::string& path, int w, int h,
                          const std::uint8_t* rgb) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    detail::FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: write failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_bytep> rows((std::size_t)h);
    for (int y = 0; y < h; ++y) rows[(std::size_t)y] = const_cast<png_bytep>(rgb + (std::size_t)y * w * 3);
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline PngImage read_png_rgb(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    detail::FileCloser closer{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: read failed: " + path);
    }
    png_init_io(png, f);
    png_read_png(png, info,
                 PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_EXPAND |
                     PNG_TRANSFORM_GRAY_TO_RGB,
                 nullptr);
    PngImage out;
    out.w = (int)png_get_image_width(png, info);
    out.h = (int)png_get_image_height(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: expected RGB after expansion: " + path);
    }
    out.rgb.resize((std::size_t)out.w * out.h * 3);
    png_bytepp rows = png_get_rows(png, info);
    for (int y = 0; y < out.h; ++y)
        std::copy(rows[y], rows[y] + (std::size_t)out.w * 3,
                  out.rgb.begin() + (std::size_t)y * out.w * 3);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// palette entries are (r,g,b) triplets, one per index
inline void write_png_indexed(const std::string& path, int w, int h, const std::uint8_t* idx,
                              const std::vector<std::uint8_t>& palette) {
    if (palette.size() % 3 != 0 || palette.empty())
        throw std::invalid_argument("png: palette must be rgb triplets");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    detail::FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: write failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8, PNG_COLOR_TYPE_PALETTE,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> pal(palette.size() / 3);
    for (std::size_t i = 0; i < pal.size(); ++i) {
        pal[i].red = palette[i * 3];
        pal[i].green = palette[i * 3 + 1];
        pal[i].blue = palette[i * 3 + 2];
    }
    png_set_PLTE(png, info, pal.data(), (int)pal.size());
    std::vector<png_bytep> rows((std::size_t)h);
    for (int y = 0; y < h; ++y) rows[(std::size_t)y] = const_cast<png_bytep>(idx + (std::size_t)y * w);
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline PngIndexed read_png_indexed(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    detail::FileCloser closer{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: read failed: " + path);
    }
    png_init_io(png, f);
    png_read_png(png, info, PNG_TRANSFORM_PACKING, nullptr);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_PALETTE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: expected an indexed-palette image: " + path);
    }
    PngIndexed out;
    out.w = (int)png_get_image_width(png, info);
    out.h = (int)png_get_image_height(png, info);
    png_colorp pal = nullptr;
    int npal = 0;
    png_get_PLTE(png, info, &pal, &npal);
    out.palette_size = npal;
    out.idx.resize((std::size_t)out.w * out.h);
    png_bytepp rows = png_get_rows(png, info);
    for (int y = 0; y < out.h; ++y)
        std::copy(rows[y], rows[y] + out.w, out.idx.begin() + (std::size_t)y * out.w);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace ldlab
