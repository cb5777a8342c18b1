#include "microspot/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "microspot/errors.hpp"

namespace microspot::imageio {

namespace {

struct MemoryReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (reader->offset + length > reader->size) {
        png_error(png, "truncated PNG stream");
    }
    std::memcpy(out, reader->data + reader->offset, length);
    reader->offset += length;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

[[noreturn]] void on_png_error(png_structp png, png_const_charp message) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text != nullptr) *text = message;
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

Image decode_png_impl(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw FormatError("not a PNG stream: " + what);
    }
    std::string error_text;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error_text, on_png_error,
                                             on_png_warning);
    png_infop info = png_create_info_struct(png);
    MemoryReader reader{bytes.data(), bytes.size(), 0};
    Image image;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG decode failed (" + error_text + "): " + what);
    }

    png_set_read_fn(png, &reader, read_from_memory);
    png_read_info(png, info);

    const auto color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);

    buffer.resize(row_bytes * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + row_bytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    image = Image(width, height);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* row = rows[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            auto sample = [&](int c) -> double {
                const std::size_t i = static_cast<std::size_t>(x * channels + c);
                if (depth == 16) return (row[2 * i] << 8) | row[2 * i + 1];
                return row[i];
            };
            double value;
            if (channels >= 3) {
                value = rec601_luma(sample(0) / scale, sample(1) / scale, sample(2) / scale);
            } else {
                value = sample(0) / scale;
            }
            image.at(x, y) = static_cast<float>(value);
        }
    }
    return image;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Binary PGM (P5) / PPM (P6) with maxval up to 65535.
Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    std::size_t pos = 2;
    auto next_token = [&]() -> long {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        long value = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            value = value * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw FormatError("malformed PNM header: " + what);
        return value;
    };
    const bool color = bytes[1] == '6';
    const long width = next_token();
    const long height = next_token();
    const long maxval = next_token();
    ++pos;  // single whitespace before raster
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
        throw FormatError("unsupported PNM header: " + what);
    }
    const int channels = color ? 3 : 1;
    const int sample_bytes = maxval > 255 ? 2 : 1;
    const std::size_t needed =
        static_cast<std::size_t>(width * height * channels * sample_bytes);
    if (bytes.size() < pos + needed) throw FormatError("truncated PNM raster: " + what);

    Image image(static_cast<int>(width), static_cast<int>(height));
    const double scale = static_cast<double>(maxval);
    const std::uint8_t* raster = bytes.data() + pos;
    for (long i = 0; i < width * height; ++i) {
        auto sample = [&](int c) -> double {
            const std::size_t k = static_cast<std::size_t>(i * channels + c);
            if (sample_bytes == 2) return (raster[2 * k] << 8) | raster[2 * k + 1];
            return raster[k];
        };
        const double value = color
            ? rec601_luma(sample(0) / scale, sample(1) / scale, sample(2) / scale)
            : sample(0) / scale;
        image.pixels[static_cast<std::size_t>(i)] = static_cast<float>(value);
    }
    return image;
}

} // namespace

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    return decode_png_impl(bytes, "<memory>");
}

Image read_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_pnm(bytes, path.string());
    }
    return decode_png_impl(bytes, path.string());
}

void quantize16(Image& image) {
    for (auto& v : image.pixels) {
        const double q = std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0);
        v = static_cast<float>(q / 65535.0);
    }
}

std::vector<std::uint8_t> encode_png16(const Image& image) {
    std::vector<std::uint8_t> out;
    std::string error_text;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error_text, on_png_error,
                                              on_png_warning);
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 2);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG encode failed: " + error_text);
    }
    png_set_write_fn(png, &out, write_to_vector, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const auto q = static_cast<std::uint16_t>(
                std::lround(std::clamp(static_cast<double>(image.at(x, y)), 0.0, 1.0) * 65535.0));
            row[2 * static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(q >> 8);
            row[2 * static_cast<std::size_t>(x) + 1] = static_cast<std::uint8_t>(q & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png16(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png16(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace microspot::imageio
