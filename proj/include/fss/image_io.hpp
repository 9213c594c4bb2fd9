#pragma once

// 8-bit PNG reading and writing for images (RGB) and index masks.

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <png.h>

#include "fss/datamodel.hpp"

namespace fss::io {

namespace detail {

struct RawIndexPng {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    std::vector<unsigned char> pixels;
    char error[256] = {0};
};

extern "C" inline void png_error_to_jmp(png_structp png, png_const_charp msg) {
    auto* raw = static_cast<RawIndexPng*>(png_get_error_ptr(png));
    std::snprintf(raw->error, sizeof(raw->error), "%s", msg);
    png_longjmp(png, 1);
}

extern "C" inline void png_warning_ignore(png_structp, png_const_charp) {}

// Reads palette indices or gray levels without colour conversion. Only
// trivially destructible state lives in this frame across setjmp.
inline bool read_index_png(FILE* fp, RawIndexPng* out) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, out, png_error_to_jmp, png_warning_ignore);
    if (png == nullptr) return false;
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
        std::snprintf(out->error, sizeof(out->error), "mask is not single-channel (color type %d)", color);
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    if (depth == 16) {
        std::snprintf(out->error, sizeof(out->error), "16-bit masks are not supported");
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    if (depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    out->width = png_get_image_width(png, info);
    out->height = png_get_image_height(png, info);
    const png_size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != out->width) {
        std::snprintf(out->error, sizeof(out->error), "unexpected row layout");
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    out->pixels.resize(static_cast<std::size_t>(out->width) * out->height);
    for (png_uint_32 y = 0; y < out->height; ++y)
        png_read_row(png, out->pixels.data() + static_cast<std::size_t>(y) * out->width, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

}  // namespace detail

/// Reads a single-channel 8-bit (or palette) PNG as raw class indices.
inline LabelMask read_mask_png(const std::filesystem::path& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (fp == nullptr) throw Error(fmt::format("cannot open mask '{}'", path.string()));
    detail::RawIndexPng raw;
    const bool ok = detail::read_index_png(fp, &raw);
    std::fclose(fp);
    if (!ok) throw Error(fmt::format("cannot decode mask '{}': {}", path.string(), raw.error));
    std::vector<ClassId> data(raw.pixels.begin(), raw.pixels.end());
    return LabelMask(static_cast<int>(raw.height), static_cast<int>(raw.width), std::move(data));
}

inline void write_mask_png(const std::filesystem::path& path, const LabelMask& mask) {
    std::vector<unsigned char> bytes(mask.area());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const ClassId v = mask.data()[i];
        if (v < 0 || v > 255) throw Error(fmt::format("mask value {} does not fit in 8 bits", v));
        bytes[i] = static_cast<unsigned char>(v);
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(mask.width());
    img.height = static_cast<png_uint_32>(mask.height());
    img.format = PNG_FORMAT_GRAY;
    if (png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr) == 0)
        throw Error(fmt::format("cannot write mask '{}': {}", path.string(), img.message));
}

/// Reads any PNG as 8-bit RGB scaled to [0, 1].
inline Image read_image_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0)
        throw Error(fmt::format("cannot open image '{}': {}", path.string(), img.message));
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr) == 0) {
        png_image_free(&img);
        throw Error(fmt::format("cannot decode image '{}': {}", path.string(), img.message));
    }
    Image out(static_cast<int>(img.height), static_cast<int>(img.width), 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) out.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
}

inline void write_image_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels() != 3 && image.channels() != 1)
        throw Error("write_image_png: only 1- or 3-channel images are supported");
    std::vector<unsigned char> bytes(image.data().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr) == 0)
        throw Error(fmt::format("cannot write image '{}': {}", path.string(), img.message));
}

}  // namespace fss::io
