#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "dualfocus/error.hpp"
#include "dualfocus/geometry.hpp"

namespace dualfocus {

/// 8-bit RGB raster, row-major, tightly packed.
class ImageBuf {
 public:
  ImageBuf(int width, int height, std::uint8_t fill = 0) : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * height * 3, fill);
  }

  ImageBuf(int width, int height, std::vector<std::uint8_t> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * height * 3) {
      throw Error(ErrorCode::InvalidArgument, "pixel buffer length does not match dimensions");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::uint8_t* pixel(int x, int y) noexcept {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  }
  const std::uint8_t* pixel(int x, int y) const noexcept {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
    auto* p = pixel(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  /// FNV-1a over dimensions and pixels; stable across runs and platforms.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&h](std::uint8_t byte) {
      h ^= byte;
      h *= 1099511628211ULL;
    };
    for (int shift = 0; shift < 32; shift += 8) {
      mix(static_cast<std::uint8_t>(static_cast<std::uint32_t>(width_) >> shift));
      mix(static_cast<std::uint8_t>(static_cast<std::uint32_t>(height_) >> shift));
    }
    for (auto byte : data_) mix(byte);
    return h;
  }

  friend bool operator==(const ImageBuf&, const ImageBuf&) = default;

 private:
  static void check_dims(int w, int h) {
    if (w < 1 || h < 1) {
      throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
    }
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

enum class Interpolation { Nearest, Bilinear };

struct ZoomPolicy {
  int target_resolution = 336;
  Interpolation interpolation = Interpolation::Bilinear;
  std::uint8_t pad_value = 127;

  void validate() const {
    if (target_resolution < 8) {
      throw Error(ErrorCode::InvalidArgument, "zoom target_resolution must be >= 8");
    }
  }
};

/// Copies the pixels under `box` verbatim. A box narrower or shorter than one
/// source pixel is rejected before rounding.
inline ImageBuf crop(const ImageBuf& img, const NormBox& box) {
  if (box.width() * img.width() < 1.0 || box.height() * img.height() < 1.0) {
    throw Error(ErrorCode::DegenerateBox, "crop region smaller than one pixel: " + box.str());
  }
  const PixelBox pb = denormalize(box, img.width(), img.height());
  ImageBuf out(pb.width(), pb.height());
  const std::size_t row_bytes = static_cast<std::size_t>(pb.width()) * 3;
  for (int y = 0; y < pb.height(); ++y) {
    std::memcpy(out.pixel(0, y), img.pixel(pb.x1(), pb.y1() + y), row_bytes);
  }
  return out;
}

/// Placement of the scaled content inside a letterboxed canvas.
struct LetterboxLayout {
  int content_w;
  int content_h;
  int offset_x;
  int offset_y;
};

inline LetterboxLayout letterbox_layout(int width, int height, int target) {
  const double scale = static_cast<double>(target) / std::max(width, height);
  const auto fit = [&](int v) {
    return std::clamp(static_cast<int>(std::lround(v * scale)), 1, target);
  };
  LetterboxLayout l{fit(width), fit(height), 0, 0};
  l.offset_x = (target - l.content_w) / 2;
  l.offset_y = (target - l.content_h) / 2;
  return l;
}

/// Aspect-preserving resize to a square canvas, centered, padded with
/// policy.pad_value.
inline ImageBuf zoom(const ImageBuf& img, const ZoomPolicy& policy = {}) {
  policy.validate();
  const int target = policy.target_resolution;
  const LetterboxLayout l = letterbox_layout(img.width(), img.height(), target);
  ImageBuf out(target, target, policy.pad_value);

  const double sx = static_cast<double>(img.width()) / l.content_w;
  const double sy = static_cast<double>(img.height()) / l.content_h;
  const int max_x = img.width() - 1;
  const int max_y = img.height() - 1;

  for (int dy = 0; dy < l.content_h; ++dy) {
    std::uint8_t* row = out.pixel(l.offset_x, l.offset_y + dy);
    if (policy.interpolation == Interpolation::Nearest) {
      const int y = std::min(max_y, static_cast<int>((dy + 0.5) * sy));
      for (int dx = 0; dx < l.content_w; ++dx) {
        const int x = std::min(max_x, static_cast<int>((dx + 0.5) * sx));
        std::memcpy(row + dx * 3, img.pixel(x, y), 3);
      }
      continue;
    }
    const double fy = std::clamp((dy + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, max_y);
    const double ty = fy - y0;
    for (int dx = 0; dx < l.content_w; ++dx) {
      const double fx = std::clamp((dx + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, max_x);
      const double tx = fx - x0;
      const std::uint8_t* p00 = img.pixel(x0, y0);
      const std::uint8_t* p01 = img.pixel(x1, y0);
      const std::uint8_t* p10 = img.pixel(x0, y1);
      const std::uint8_t* p11 = img.pixel(x1, y1);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + (p01[c] - p00[c]) * tx;
        const double bottom = p10[c] + (p11[c] - p10[c]) * tx;
        const double v = top + (bottom - top) * ty;
        row[dx * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

namespace detail {

// Reads the orientation tag (0x0112) from a TIFF-structured EXIF block.
// Returns 1 when absent or unreadable.
inline int exif_orientation(std::span<const std::uint8_t> tiff) {
  if (tiff.size() < 8) return 1;
  bool little;
  if (tiff[0] == 'I' && tiff[1] == 'I') {
    little = true;
  } else if (tiff[0] == 'M' && tiff[1] == 'M') {
    little = false;
  } else {
    return 1;
  }
  const auto u16 = [&](std::size_t off) -> std::uint32_t {
    return little ? (tiff[off] | (tiff[off + 1] << 8)) : ((tiff[off] << 8) | tiff[off + 1]);
  };
  const auto u32 = [&](std::size_t off) -> std::uint32_t {
    return little ? (u16(off) | (u16(off + 2) << 16)) : ((u16(off) << 16) | u16(off + 2));
  };
  if (u16(2) != 42) return 1;
  const std::size_t ifd = u32(4);
  if (ifd + 2 > tiff.size()) return 1;
  const std::size_t count = u16(ifd);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t entry = ifd + 2 + i * 12;
    if (entry + 12 > tiff.size()) break;
    if (u16(entry) == 0x0112) {
      const int value = static_cast<int>(u16(entry + 8));
      return (value >= 1 && value <= 8) ? value : 1;
    }
  }
  return 1;
}

inline ImageBuf apply_orientation(const ImageBuf& src, int orientation) {
  if (orientation <= 1 || orientation > 8) return src;
  const int w = src.width();
  const int h = src.height();
  const bool swap = orientation >= 5;
  ImageBuf out(swap ? h : w, swap ? w : h);
  for (int oy = 0; oy < out.height(); ++oy) {
    for (int ox = 0; ox < out.width(); ++ox) {
      int sx = ox, sy = oy;
      switch (orientation) {
        case 2: sx = w - 1 - ox; break;
        case 3: sx = w - 1 - ox; sy = h - 1 - oy; break;
        case 4: sy = h - 1 - oy; break;
        case 5: sx = oy; sy = ox; break;
        case 6: sx = oy; sy = h - 1 - ox; break;
        case 7: sx = w - 1 - oy; sy = h - 1 - ox; break;
        case 8: sx = w - 1 - oy; sy = ox; break;
        default: break;
      }
      std::memcpy(out.pixel(ox, oy), src.pixel(sx, sy), 3);
    }
  }
  return out;
}

// Finds an eXIf chunk ahead of the image data, if any.
inline int png_orientation(std::span<const std::uint8_t> bytes) {
  std::size_t off = 8;
  while (off + 12 <= bytes.size()) {
    const std::size_t len = (std::size_t{bytes[off]} << 24) | (bytes[off + 1] << 16) |
                            (bytes[off + 2] << 8) | bytes[off + 3];
    const std::string type(reinterpret_cast<const char*>(bytes.data() + off + 4), 4);
    if (type == "IDAT" || type == "IEND") break;
    if (type == "eXIf" && off + 8 + len <= bytes.size()) {
      return exif_orientation(bytes.subspan(off + 8, len));
    }
    off += 12 + len;
  }
  return 1;
}

inline ImageBuf decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::DecodeError, std::string("png header: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width < 1 || image.height < 1 || image.width > 1u << 15 || image.height > 1u << 15) {
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, "png dimensions out of range");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, "png data: " + msg);
  }
  ImageBuf out(static_cast<int>(image.width), static_cast<int>(image.height), std::move(pixels));
  return apply_orientation(out, png_orientation(bytes));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void jpeg_error_exit_to_jump(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Decoder state lives on the heap so nothing on the stack changes between
// setjmp and a possible longjmp.
struct JpegDecodeState {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  std::vector<std::uint8_t> pixels;
  int width = 0;
  int height = 0;
  int orientation = 1;
};

inline bool jpeg_decode_into(JpegDecodeState* s, const std::uint8_t* data, std::size_t size) {
  s->cinfo.err = jpeg_std_error(&s->err.base);
  s->err.base.error_exit = jpeg_error_exit_to_jump;
  if (setjmp(s->err.jump)) {
    jpeg_destroy_decompress(&s->cinfo);
    return false;
  }
  jpeg_create_decompress(&s->cinfo);
  jpeg_mem_src(&s->cinfo, data, static_cast<unsigned long>(size));
  jpeg_save_markers(&s->cinfo, JPEG_APP0 + 1, 0xFFFF);
  jpeg_read_header(&s->cinfo, TRUE);
  for (jpeg_saved_marker_ptr m = s->cinfo.marker_list; m != nullptr; m = m->next) {
    if (m->marker == JPEG_APP0 + 1 && m->data_length > 6 &&
        std::memcmp(m->data, "Exif\0\0", 6) == 0) {
      s->orientation = exif_orientation({m->data + 6, m->data_length - 6});
    }
  }
  s->cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&s->cinfo);
  s->width = static_cast<int>(s->cinfo.output_width);
  s->height = static_cast<int>(s->cinfo.output_height);
  s->pixels.resize(static_cast<std::size_t>(s->width) * s->height * 3);
  while (s->cinfo.output_scanline < s->cinfo.output_height) {
    JSAMPROW row = s->pixels.data() +
                   static_cast<std::size_t>(s->cinfo.output_scanline) * s->width * 3;
    jpeg_read_scanlines(&s->cinfo, &row, 1);
  }
  jpeg_finish_decompress(&s->cinfo);
  jpeg_destroy_decompress(&s->cinfo);
  return true;
}

inline ImageBuf decode_jpeg(std::span<const std::uint8_t> bytes) {
  auto state = std::make_unique<JpegDecodeState>();
  if (!jpeg_decode_into(state.get(), bytes.data(), bytes.size())) {
    throw Error(ErrorCode::DecodeError, std::string("jpeg: ") + state->err.message);
  }
  // libjpeg only warns on premature end of data; treat that as truncation.
  if (state->err.base.num_warnings > 0) {
    throw Error(ErrorCode::DecodeError, "jpeg: corrupt or truncated data");
  }
  ImageBuf out(state->width, state->height, std::move(state->pixels));
  return apply_orientation(out, state->orientation);
}

}  // namespace detail

/// Decodes PNG or JPEG bytes (sniffed by magic number).
inline ImageBuf decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) {
    return detail::decode_png(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return detail::decode_jpeg(bytes);
  }
  throw Error(ErrorCode::DecodeError, "unrecognized image format");
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageBuf load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

/// Bytes handed to a backend, tagged with their media type.
struct WirePayload {
  std::vector<std::uint8_t> bytes;
  std::string media_type;
};

inline WirePayload encode_wire(const ImageBuf& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data().data(), 0, nullptr)) {
    throw Error(ErrorCode::InvalidArgument, std::string("png sizing: ") + image.message);
  }
  WirePayload out{std::vector<std::uint8_t>(size), "image/png"};
  if (!png_image_write_to_memory(&image, out.bytes.data(), &size, 0, img.data().data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::InvalidArgument, std::string("png encode: ") + image.message);
  }
  out.bytes.resize(size);
  return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char kTable[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kTable[(v >> 18) & 63];
    out += kTable[(v >> 12) & 63];
    out += kTable[(v >> 6) & 63];
    out += kTable[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out += kTable[(v >> 18) & 63];
    out += kTable[(v >> 12) & 63];
    out += (i + 1 < in.size()) ? kTable[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string data_url(const WirePayload& payload) {
  return "data:" + payload.media_type + ";base64," + base64_encode(payload.bytes);
}

}  // namespace dualfocus
