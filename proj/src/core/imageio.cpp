#include "imageio.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace fbind {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    throw IoError("cannot open '" + path.string() + "'");
  }
  return f;
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return e;
}

int to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<int>(std::lround(c * 255.0));
}

// ---- PNG ----

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

// Decodes to 8-bit rows; `expand_rgb` turns palette/gray into RGB, otherwise
// palette indices / gray values are returned verbatim (one byte per pixel).
std::vector<std::vector<png_byte>> read_png_rows(
    const std::filesystem::path& path, bool expand_rgb, int* out_h, int* out_w,
    int* out_channels) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("png_create_read_struct failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(r.png))) {
    throw IoError("failed to decode PNG '" + path.string() + "'");
  }
  png_init_io(r.png, f.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  const png_byte color = png_get_color_type(r.png, r.info);
  const png_byte depth = png_get_bit_depth(r.png, r.info);

  if (depth == 16) png_set_strip_16(r.png);
  if (expand_rgb) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(r.png);
    }
    png_set_strip_alpha(r.png);
  } else {
    // label masks: keep palette indices; unpack sub-byte depths to one byte
    if (depth < 8) png_set_packing(r.png);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA || color == PNG_COLOR_TYPE_RGB_ALPHA) {
      png_set_strip_alpha(r.png);
    }
  }
  png_set_interlace_handling(r.png);
  png_read_update_info(r.png, r.info);

  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int channels = png_get_channels(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);

  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h));
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[y].resize(rowbytes);
    row_ptrs[y] = rows[y].data();
  }
  png_read_image(r.png, row_ptrs.data());
  png_read_end(r.png, nullptr);

  *out_h = h;
  *out_w = w;
  *out_channels = channels;
  return rows;
}

Image read_image_png(const std::filesystem::path& path) {
  int h = 0, w = 0, channels = 0;
  auto rows = read_png_rows(path, /*expand_rgb=*/true, &h, &w, &channels);
  if (channels != 3) {
    throw IoError("expected RGB data in '" + path.string() + "', got " +
                  std::to_string(channels) + " channels");
  }
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = rows[y][x * 3 + c] / 255.0;
      }
    }
  }
  return img;
}

// ---- JPEG ----

struct JpegErr {
  jpeg_error_mgr mgr;
  std::string message;
};

void jpeg_error_throw(j_common_ptr cinfo) {
  char buf[JMSG_LENGTH_MAX];
  (*cinfo->err->format_message)(cinfo, buf);
  throw IoError(std::string("jpeg: ") + buf);
}

Image read_image_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_throw;
  jpeg_create_decompress(&cinfo);
  try {
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int h = static_cast<int>(cinfo.output_height);
    const int w = static_cast<int>(cinfo.output_width);
    Image img(h, w);
    std::vector<JSAMPLE> row(static_cast<std::size_t>(w) * 3);
    JSAMPROW rp = row.data();
    for (int y = 0; y < h; ++y) {
      jpeg_read_scanlines(&cinfo, &rp, 1);
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          img.at(y, x, c) = row[x * 3 + c] / 255.0;
        }
      }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
}

// ---- NPY ----

void write_npy(const std::filesystem::path& path, const std::string& shape,
               const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " +
                       shape + ", }";
  const std::size_t base = 10;  // magic + version + header length field
  const std::size_t padded = ((base + header.size() + 1 + 63) / 64) * 64;
  header.append(padded - base - header.size() - 1, ' ');
  header.push_back('\n');
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.write(reinterpret_cast<const char*>(magic), 8);
  const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hlen), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  unsigned char magic[8];
  in.read(reinterpret_cast<char*>(magic), 8);
  static const unsigned char want[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (!in || std::memcmp(magic, want, 6) != 0) {
    throw IoError("'" + path.string() + "' is not a .npy file");
  }
  const int ver_major = magic[6];
  std::uint32_t hlen = 0;
  if (ver_major == 1) {
    std::uint16_t h16 = 0;
    in.read(reinterpret_cast<char*>(&h16), 2);
    hlen = h16;
  } else {
    in.read(reinterpret_cast<char*>(&hlen), 4);
  }
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  if (!in) throw IoError("truncated npy header in '" + path.string() + "'");

  const auto find_value = [&](const std::string& key) -> std::string {
    const auto kpos = header.find("'" + key + "'");
    if (kpos == std::string::npos) {
      throw IoError("npy header missing '" + key + "' in '" + path.string() + "'");
    }
    auto pos = header.find(':', kpos);
    return header.substr(pos + 1);
  };

  std::string descr = find_value("descr");
  const auto q0 = descr.find('\'');
  const auto q1 = descr.find('\'', q0 + 1);
  descr = descr.substr(q0 + 1, q1 - q0 - 1);
  if (descr != "<f8" && descr != "<f4") {
    throw IoError("unsupported npy dtype '" + descr + "' (need <f4 or <f8)");
  }
  if (find_value("fortran_order").find("True") != std::string::npos) {
    throw IoError("fortran-ordered npy arrays are not supported");
  }
  std::string shape_s = find_value("shape");
  const auto p0 = shape_s.find('(');
  const auto p1 = shape_s.find(')');
  shape_s = shape_s.substr(p0 + 1, p1 - p0 - 1);

  NpyArray arr;
  std::stringstream ss(shape_s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  std::size_t count = 1;
  for (auto s : arr.shape) count *= s;
  arr.data.resize(count);
  if (descr == "<f8") {
    in.read(reinterpret_cast<char*>(arr.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    std::vector<float> tmp(count);
    in.read(reinterpret_cast<char*>(tmp.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    std::copy(tmp.begin(), tmp.end(), arr.data.begin());
  }
  if (!in) throw IoError("truncated npy payload in '" + path.string() + "'");
  return arr;
}

Image npy_to_image(const NpyArray& arr, const std::string& origin) {
  if (arr.shape.size() == 2 ||
      (arr.shape.size() == 3 && arr.shape[2] == 1)) {
    Image img(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]));
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const double g = arr.data[static_cast<std::size_t>(y) * img.w + x];
        img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
      }
    }
    return img;
  }
  if (arr.shape.size() == 3 && arr.shape[2] == 3) {
    Image img(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]));
    std::copy(arr.data.begin(), arr.data.end(), img.v.begin());
    return img;
  }
  throw IoError("npy array in '" + origin +
                "' must have shape (h,w), (h,w,1) or (h,w,3)");
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_image_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_image_jpeg(path);
  if (ext == ".npy") return npy_to_image(read_npy(path), path.string());
  throw IoError("unsupported image extension '" + ext + "' in '" +
                path.string() + "'");
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  FilePtr f = open_file(path, "wb");
  PngWriter wtr;
  wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wtr.png) throw IoError("png_create_write_struct failed");
  wtr.info = png_create_info_struct(wtr.png);
  if (!wtr.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(wtr.png))) {
    throw IoError("failed to encode PNG '" + path.string() + "'");
  }
  png_init_io(wtr.png, f.get());
  png_set_IHDR(wtr.png, wtr.info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wtr.png, wtr.info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x * 3 + c] = static_cast<png_byte>(to_byte(img.at(y, x, c)));
      }
    }
    png_write_row(wtr.png, row.data());
  }
  png_write_end(wtr.png, nullptr);
}

void write_image_jpeg(const std::filesystem::path& path, const Image& img,
                      int quality) {
  FilePtr f = open_file(path, "wb");
  jpeg_compress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_throw;
  jpeg_create_compress(&cinfo);
  try {
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = static_cast<JDIMENSION>(img.w);
    cinfo.image_height = static_cast<JDIMENSION>(img.h);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<JSAMPLE> row(static_cast<std::size_t>(img.w) * 3);
    JSAMPROW rp = row.data();
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        for (int c = 0; c < 3; ++c) {
          row[x * 3 + c] = static_cast<JSAMPLE>(to_byte(img.at(y, x, c)));
        }
      }
      jpeg_write_scanlines(&cinfo, &rp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
  } catch (...) {
    jpeg_destroy_compress(&cinfo);
    throw;
  }
}

void write_image_npy(const std::filesystem::path& path, const Image& img) {
  write_npy_map(path, img, 3);
}

SegMask read_mask_png(const std::filesystem::path& path) {
  int h = 0, w = 0, channels = 0;
  auto rows = read_png_rows(path, /*expand_rgb=*/false, &h, &w, &channels);
  if (channels != 1) {
    throw IoError("mask '" + path.string() +
                  "' must be single-channel (gray or palette) PNG");
  }
  SegMask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      m.at(y, x) = rows[y][x];
    }
  }
  return m;
}

void write_mask_png(const std::filesystem::path& path, const SegMask& mask) {
  for (int v : mask.v) {
    if (v < 0 || v > 255) {
      throw ValidationError("mask value " + std::to_string(v) +
                            " does not fit 8-bit PNG");
    }
  }
  FilePtr f = open_file(path, "wb");
  PngWriter wtr;
  wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wtr.png) throw IoError("png_create_write_struct failed");
  wtr.info = png_create_info_struct(wtr.png);
  if (!wtr.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(wtr.png))) {
    throw IoError("failed to encode PNG '" + path.string() + "'");
  }
  png_init_io(wtr.png, f.get());
  png_set_IHDR(wtr.png, wtr.info, static_cast<png_uint_32>(mask.w),
               static_cast<png_uint_32>(mask.h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wtr.png, wtr.info);
  std::vector<png_byte> row(static_cast<std::size_t>(mask.w));
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      row[x] = static_cast<png_byte>(mask.at(y, x));
    }
    png_write_row(wtr.png, row.data());
  }
  png_write_end(wtr.png, nullptr);
}

Image read_npy_map(const std::filesystem::path& path) {
  return npy_to_image(read_npy(path), path.string());
}

Image read_perturbation(const std::filesystem::path& path) {
  if (lower_ext(path) == ".npy") return read_npy_map(path);
  Image img = read_image(path);
  const double center = 128.0 / 255.0;
  for (double& v : img.v) v -= center;
  return img;
}

void write_npy_map(const std::filesystem::path& path, const Image& img,
                   int channels) {
  if (channels == 3) {
    const std::string shape = "(" + std::to_string(img.h) + ", " +
                              std::to_string(img.w) + ", 3)";
    write_npy(path, shape, img.v.data(), img.v.size());
    return;
  }
  if (channels == 1) {
    std::vector<double> gray(static_cast<std::size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        gray[static_cast<std::size_t>(y) * img.w + x] = img.at(y, x, 0);
      }
    }
    const std::string shape =
        "(" + std::to_string(img.h) + ", " + std::to_string(img.w) + ")";
    write_npy(path, shape, gray.data(), gray.size());
    return;
  }
  throw ValidationError("npy map channels must be 1 or 3");
}

}  // namespace fbind
