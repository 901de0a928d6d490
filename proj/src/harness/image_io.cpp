#include "raincap/harness/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include "raincap/harness/checkpoint.hpp"

// jpeglib.h needs FILE and size_t declared first
#include <jpeglib.h>

namespace raincap::harness {

std::uint8_t quantize(float v) {
  if (!(v > 0.0f)) return 0;  // NaN lands here too
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

namespace {

std::string write_png_rgb(const std::vector<std::uint8_t>& rgb, int height, int width) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr))
    throw DataError(std::string("png encode failed: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr))
    throw DataError(std::string("png encode failed: ") + img.message);
  out.resize(size);
  png_image_free(&img);
  return out;
}

rain::Image from_rgb8(const std::uint8_t* rgb, int height, int width) {
  rain::Image out(height, width);
  const std::size_t plane = out.plane_size();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out.values[c * plane + i] = rgb[i * 3 + static_cast<std::size_t>(c)] / 255.0f;
  return out;
}

struct PngSource {
  std::string_view bytes;
  std::size_t pos = 0;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->bytes.size() - src->pos < n) png_error(png, "unexpected end of data");
  std::memcpy(out, src->bytes.data() + src->pos, n);
  src->pos += n;
}

void png_fail(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = msg;
  png_longjmp(png, 1);
}

void png_quiet(png_structp, png_const_charp) {}

// The low-level reader, because png_read_end is the only place trailing
// CRCs and the zlib checksum get verified.
rain::Image decode_png(std::string_view bytes) {
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_quiet);
  if (!png) throw DataError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  png_infop end_info = png_create_info_struct(png);
  PngSource src{bytes};
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, &end_info);
    throw DataError("corrupt png: " + message);
  }
  if (!info || !end_info) png_error(png, "out of memory");
  png_set_read_fn(png, &src, png_read_mem);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info), height = png_get_image_height(png, info);
  if (width > 1u << 15 || height > 1u << 15) png_error(png, "image too large");
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) png_error(png, "unexpected row layout");
  buf.resize(static_cast<std::size_t>(height) * width * 3);
  for (png_uint_32 y = 0; y < height; ++y) rows.push_back(buf.data() + static_cast<std::size_t>(y) * width * 3);
  png_read_image(png, rows.data());
  png_read_end(png, end_info);
  png_destroy_read_struct(&png, &info, &end_info);
  return from_rgb8(buf.data(), static_cast<int>(height), static_cast<int>(width));
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg only warns about truncated or damaged scan data and pads with gray
void jpeg_warn(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_fail(cinfo);
}

rain::Image decode_jpeg(std::string_view bytes) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  err.mgr.emit_message = jpeg_warn;
  err.message[0] = '\0';
  std::vector<std::uint8_t> buf;
  int height = 0, width = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(std::string("corrupt jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = static_cast<int>(cinfo.output_height);
  width = static_cast<int>(cinfo.output_width);
  buf.resize(static_cast<std::size_t>(height) * width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(buf.data(), height, width);
}

}  // namespace

std::string encode_png(const rain::Image& img) {
  if (img.height <= 0 || img.width <= 0) throw std::invalid_argument("cannot export an empty image");
  const std::size_t plane = img.plane_size();
  std::vector<std::uint8_t> rgb(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) rgb[i * 3 + static_cast<std::size_t>(c)] = quantize(img.values[c * plane + i]);
  return write_png_rgb(rgb, img.height, img.width);
}

void export_image(const rain::Image& img, const std::filesystem::path& path) { write_file_atomic(path, encode_png(img)); }

void export_plane(const rain::Plane& p, const std::filesystem::path& path) {
  rain::Image img(p.height, p.width);
  for (int c = 0; c < 3; ++c) std::copy(p.values.begin(), p.values.end(), img.values.begin() + c * img.plane_size());
  export_image(img, path);
}

rain::Image decode_image(std::string_view bytes) {
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF)
    return decode_jpeg(bytes);
  throw DataError("unrecognised image format (expected PNG or JPEG)");
}

rain::Image import_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

rain::Image resize_bilinear(const rain::Image& img, int height, int width) {
  if (height <= 0 || width <= 0 || img.height <= 0 || img.width <= 0)
    throw std::invalid_argument("resize needs positive extents");
  rain::Image out(height, width);
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                         wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace raincap::harness
