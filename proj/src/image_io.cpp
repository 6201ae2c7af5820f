#include "scgan/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace scgan::image {

namespace {

struct ReadCursor {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

struct ErrorSlot {
    char message[256];
};

void on_error(png_structp png, png_const_charp msg) {
    auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
    if (slot) {
        std::strncpy(slot->message, msg ? msg : "unknown", sizeof(slot->message) - 1);
        slot->message[sizeof(slot->message) - 1] = '\0';
    }
    png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

void read_bytes(png_structp png, png_bytep out, png_size_t n) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + n > cur->size) png_error(png, "unexpected end of PNG data");
    std::memcpy(out, cur->data + cur->pos, n);
    cur->pos += n;
}

void write_bytes(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void flush_noop(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const RawImage& img) {
    if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("encode_png: empty image");
    if (img.bit_depth != 8 && img.bit_depth != 16) throw std::invalid_argument("encode_png: bit depth must be 8 or 16");
    if (img.samples.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("encode_png: sample count does not match dimensions");

    const int bytes_per_sample = img.bit_depth / 8;
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3 * bytes_per_sample;
    std::vector<std::uint8_t> packed(stride * img.height);
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        if (bytes_per_sample == 1) {
            packed[i] = static_cast<std::uint8_t>(img.samples[i]);
        } else {
            packed[2 * i] = static_cast<std::uint8_t>(img.samples[i] >> 8);
            packed[2 * i + 1] = static_cast<std::uint8_t>(img.samples[i] & 0xff);
        }
    }
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = packed.data() + y * stride;

    std::vector<std::uint8_t> out;
    ErrorSlot err{};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error(std::string("PNG encode failed: ") + err.message);
    }
    png_set_write_fn(png, &out, write_bytes, flush_noop);
    png_set_IHDR(png, info, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

RawImage decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw std::runtime_error("not a PNG file");

    RawImage img;
    std::vector<std::uint8_t> packed;
    std::vector<png_bytep> rows;
    ReadCursor cursor{bytes.data(), bytes.size(), 0};
    ErrorSlot err{};

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(std::string("malformed PNG: ") + err.message);
    }
    png_set_read_fn(png, &cursor, read_bytes);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    packed.resize(stride * img.height);
    rows.resize(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = packed.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (stride != static_cast<std::size_t>(img.width) * 3 * (img.bit_depth / 8))
        throw std::runtime_error("unsupported PNG layout");
    img.samples.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (std::size_t i = 0; i < img.samples.size(); ++i)
        img.samples[i] = img.bit_depth == 16 ? static_cast<std::uint16_t>((packed[2 * i] << 8) | packed[2 * i + 1])
                                             : packed[i];
    return img;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace scgan::image
