#include "deblur/png_io.hpp"

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <png.h>

#include "deblur/errors.hpp"

namespace deblur {

namespace {

struct Reader {
    const unsigned char* data;
    std::size_t size;
    std::size_t pos;
};

void read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(png));
    if (r->pos + n > r->size) png_error(png, "unexpected end of data");
    std::memcpy(out, r->data + r->pos, n);
    r->pos += n;
}

void write_fn(png_structp png, png_bytep data, png_size_t n) {
    auto* v = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
    v->insert(v->end(), data, data + n);
}

void flush_fn(png_structp) {}

} // namespace

Tensor decode_png_bytes(const unsigned char* bytes, std::size_t size) {
    if (size < 8 || png_sig_cmp(bytes, 0, 8) != 0) throw IoError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: allocation failure");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: decode failed");
    }
    Reader reader{bytes, size, 0};
    png_set_read_fn(png, &reader, read_fn);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: only 8-bit RGB is supported (bit depth " +
                      std::to_string(bit_depth) + ", color type " + std::to_string(color_type) +
                      ")");
    }

    pixels.resize(std::size_t(h) * w * 3);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + std::size_t(r) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({3, int(h), int(w)});
    for (int c = 0; c < 3; ++c)
        for (png_uint_32 r = 0; r < h; ++r)
            for (png_uint_32 col = 0; col < w; ++col)
                out.data[(std::size_t(c) * h + r) * w + col] =
                    float(pixels[(std::size_t(r) * w + col) * 3 + std::size_t(c)]) / 255.0f;
    return out;
}

Tensor decode_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    try {
        return decode_png_bytes(bytes.data(), bytes.size());
    } catch (const IoError& e) {
        throw IoError(std::string(e.what()) + " (" + path + ")");
    }
}

std::vector<unsigned char> encode_png_bytes(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("encode_png: image must be 3xHxW, got " + image.shape_str());
    const int h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> pixels(std::size_t(h) * w * 3);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col) {
                float v = image.data[(std::size_t(c) * h + r) * w + col];
                v = std::min(1.0f, std::max(0.0f, v));
                pixels[(std::size_t(r) * w + col) * 3 + std::size_t(c)] =
                    (unsigned char)(std::floor(v * 255.0f + 0.5f));
            }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: allocation failure");
    }
    std::vector<unsigned char> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: encode failed");
    }
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < h; ++r)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + std::size_t(r) * w * 3));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    return out;
}

void encode_png(const std::string& path, const Tensor& image) {
    const auto bytes = encode_png_bytes(image);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

} // namespace deblur
