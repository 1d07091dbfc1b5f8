#include <png.h>
#include <csetjmp>
#include <cstdio>
// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include <cctype>
#include <cstring>
#include <string>

#include "woodid/digest.hpp"
#include "woodid/error.hpp"
#include "woodid/image.hpp"

namespace woodid {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}
bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}
bool is_pnm(std::span<const std::uint8_t> b) {
  return b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6');
}

Image from_interleaved(const std::uint8_t* data, int width, int height, int components) {
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = data + static_cast<std::size_t>(y) * width * components;
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = row + static_cast<std::size_t>(x) * components;
      for (int c = 0; c < 3; ++c)
        img.channels[c](y, x) = static_cast<float>(components >= 3 ? px[c] : px[0]);
    }
  }
  return img;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(ErrorKind::UndecodableImage, std::string("png: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::UndecodableImage, std::string("png: ") + image.message);
  }
  return from_interleaved(buffer.data(), static_cast<int>(image.width),
                          static_cast<int>(image.height), 3);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
  std::longjmp(mgr->jump, 1);
}

// Shared by decode and probe; returns false on libjpeg failure.
bool jpeg_read(std::span<const std::uint8_t> bytes, bool header_only, Image* out,
               std::array<int, 2>* dims) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buffer;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (header_only) {
    *dims = {static_cast<int>(cinfo.image_width), static_cast<int>(cinfo.image_height)};
    jpeg_destroy_decompress(&cinfo);
    return true;
  }
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  const int comps = cinfo.output_components;
  buffer.resize(static_cast<std::size_t>(w) * h * comps);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * comps;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  *out = from_interleaved(buffer.data(), w, h, comps);
  return true;
}

struct PnmHeader {
  int width = 0, height = 0, maxval = 0, components = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> b) {
  PnmHeader h;
  h.components = b[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    int value = 0;
    bool any = false;
    while (pos < b.size() && std::isdigit(b[pos])) {
      value = value * 10 + (b[pos++] - '0');
      any = true;
      if (value > (1 << 24)) break;
    }
    if (!any) throw Error(ErrorKind::UndecodableImage, "pnm: malformed header");
    return value;
  };
  h.width = next_int();
  h.height = next_int();
  h.maxval = next_int();
  if (pos >= b.size() || !std::isspace(b[pos]))
    throw Error(ErrorKind::UndecodableImage, "pnm: malformed header");
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255)
    throw Error(ErrorKind::UndecodableImage, "pnm: unsupported header values");
  return h;
}

Image decode_pnm(std::span<const std::uint8_t> b) {
  const PnmHeader h = parse_pnm_header(b);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * h.components;
  if (b.size() < h.data_offset + need)
    throw Error(ErrorKind::UndecodableImage, "pnm: truncated pixel data");
  Image img = from_interleaved(b.data() + h.data_offset, h.width, h.height, h.components);
  if (h.maxval != 255)
    for (auto& c : img.channels) c *= 255.0f / static_cast<float>(h.maxval);
  return img;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) {
    Image img;
    if (!jpeg_read(bytes, false, &img, nullptr))
      throw Error(ErrorKind::UndecodableImage, "jpeg: decode failed");
    return img;
  }
  if (is_pnm(bytes)) return decode_pnm(bytes);
  throw Error(ErrorKind::UndecodableImage, "unrecognized image format");
}

Image read_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error&) {
    throw Error(ErrorKind::UndecodableImage, "cannot read " + path.string());
  }
  return decode_image(bytes);
}

std::array<int, 2> probe_image_dims(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
      throw Error(ErrorKind::UndecodableImage, std::string("png: ") + image.message);
    std::array<int, 2> dims{static_cast<int>(image.width), static_cast<int>(image.height)};
    png_image_free(&image);
    return dims;
  }
  if (is_jpeg(bytes)) {
    std::array<int, 2> dims{};
    if (!jpeg_read(bytes, true, nullptr, &dims))
      throw Error(ErrorKind::UndecodableImage, "jpeg: bad header");
    return dims;
  }
  if (is_pnm(bytes)) {
    const PnmHeader h = parse_pnm_header(bytes);
    return {h.width, h.height};
  }
  throw Error(ErrorKind::UndecodableImage, "unrecognized image format");
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  const int w = image.width(), h = image.height();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::round(image.channels[c](y, x));
        pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw Error(ErrorKind::IoError, std::string("png encode: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw Error(ErrorKind::IoError, std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_file_bytes(path, encode_png(image));
}

}  // namespace woodid
