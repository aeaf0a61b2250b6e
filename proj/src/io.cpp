#include "dfd/io.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>

#include <png.h>

#include "binary_io.hpp"
#include "dfd/errors.hpp"

namespace dfd {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Keeps libpng quiet; the message is reported through the thrown exception.
void png_error_to_string(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
  if (sink) *sink = msg;
  png_longjmp(png, 1);
}
void png_ignore_warning(png_structp, png_const_charp) {}

// Clamped, rounded codes for all samples, row by row, PNG byte order.
std::vector<unsigned char> encode_samples(const std::vector<const Plane*>& planes, int bit_depth) {
  const Eigen::Index rows = planes[0]->rows(), cols = planes[0]->cols();
  const int channels = static_cast<int>(planes.size());
  const int bytes = bit_depth / 8;
  const double max_code = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<unsigned char> out(static_cast<std::size_t>(rows * cols * channels * bytes));
  std::size_t at = 0;
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      for (int c = 0; c < channels; ++c) {
        double v = (*planes[c])(y, x);
        v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        const auto code = static_cast<unsigned>(std::lround(v * max_code));
        if (bytes == 2) out[at++] = static_cast<unsigned char>(code >> 8);  // big-endian
        out[at++] = static_cast<unsigned char>(code & 0xff);
      }
    }
  }
  return out;
}

void write_png_planes(const std::filesystem::path& path, const std::vector<const Plane*>& planes, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ParameterError("PNG bit depth must be 8 or 16");
  const Eigen::Index rows = planes[0]->rows(), cols = planes[0]->cols();
  if (rows < 1 || cols < 1) throw ParameterError("cannot write an empty image");
  const std::vector<unsigned char> samples = encode_samples(planes, bit_depth);
  const std::size_t stride = samples.size() / static_cast<std::size_t>(rows);
  const int color = planes.size() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path.string());
  std::string png_message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &png_message, png_error_to_string, png_ignore_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string() + " (" + png_message + ")");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Eigen::Index y = 0; y < rows; ++y) {
    png_write_row(png, const_cast<png_bytep>(samples.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Rgb& image, int bit_depth) {
  write_png_planes(path, {&image[0], &image[1], &image[2]}, bit_depth);
}

void write_png_gray(const std::filesystem::path& path, const Plane& image, int bit_depth) {
  write_png_planes(path, {&image}, bit_depth);
}

Rgb read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open for reading: " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + ": not a PNG file (bad signature at byte offset 0)");
  }
  std::string png_message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &png_message, png_error_to_string, png_ignore_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Rgb out;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt or truncated PNG (" + png_message + ")");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info), height = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  std::vector<png_bytep> rowptr(height);
  for (png_uint_32 y = 0; y < height; ++y) rowptr[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rowptr.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out = Rgb::Zero(height, width);
  const double max_code = bit_depth == 16 ? 65535.0 : 255.0;
  for (png_uint_32 y = 0; y < height; ++y) {
    const unsigned char* r = rowptr[y];
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        unsigned code;
        if (bit_depth == 16) {
          const std::size_t at = (x * 3 + c) * 2;
          code = (static_cast<unsigned>(r[at]) << 8) | r[at + 1];
        } else {
          code = r[x * 3 + c];
        }
        out[c](y, x) = code / max_code;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Reads "key value" lines until "end"; returns the map and leaves the stream
// at the payload.
std::map<std::string, std::string> read_header(std::istream& is, const std::string& magic,
                                               const std::string& where) {
  std::string line;
  if (!std::getline(is, line) || line != magic) {
    throw FormatError(where + ": bad magic at byte offset 0 (expected " + magic + ")");
  }
  std::map<std::string, std::string> kv;
  while (true) {
    const auto offset = static_cast<long long>(is.tellg());
    if (!std::getline(is, line)) {
      throw FormatError(where + ": header ended without 'end' at byte offset " + std::to_string(offset));
    }
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key) || !(ls >> value)) {
      throw FormatError(where + ": malformed header line at byte offset " + std::to_string(offset));
    }
    kv[key] = value;
  }
  return kv;
}

const std::string& header_field(const std::map<std::string, std::string>& kv, const std::string& key,
                                const std::string& where) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(where + ": header is missing '" + key + "'");
  return it->second;
}

long long header_int(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& where) {
  const std::string& v = header_field(kv, key, where);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw FormatError(where + ": header field '" + key + "' is not an integer");
  }
}

double header_real(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& where) {
  const std::string& v = header_field(kv, key, where);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError(where + ": header field '" + key + "' is not a number");
  }
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_plane_f32(std::ostream& os, const Plane& p, double scale) {
  for (Eigen::Index i = 0; i < p.size(); ++i) detail::write_le<float>(os, static_cast<float>(p.data()[i] / scale));
}

Plane read_plane_f32(std::istream& is, Eigen::Index rows, Eigen::Index cols, double scale, const std::string& where) {
  Plane p(rows, cols);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<double>(detail::read_le<float>(is, where)) * scale;
  return p;
}

void expect_eof(std::istream& is, const std::string& where) {
  const auto offset = static_cast<long long>(is.tellg());
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(where + ": trailing bytes after payload at byte offset " + std::to_string(offset));
  }
}

}  // namespace

void write_float_map(const std::filesystem::path& path, const FloatMap& map) {
  if (map.channels.empty()) throw ParameterError("float map has no channels");
  if (!(map.scale > 0.0) || !std::isfinite(map.scale)) throw ParameterError("float map scale must be > 0");
  for (const auto& c : map.channels) {
    if (c.rows() != map.channels[0].rows() || c.cols() != map.channels[0].cols()) {
      throw ParameterError("float map channels differ in shape");
    }
  }
  auto os = detail::open_out(path.string());
  os << "DFDMAP1\nrows " << map.channels[0].rows() << "\ncols " << map.channels[0].cols() << "\nchannels "
     << map.channels.size() << "\nscale " << exact(map.scale) << "\nend\n";
  for (const auto& c : map.channels) write_plane_f32(os, c, map.scale);
  if (!os) throw IoError("write failed: " + path.string());
}

FloatMap read_float_map(const std::filesystem::path& path) {
  auto is = detail::open_in(path.string());
  const std::string where = path.string();
  const auto kv = read_header(is, "DFDMAP1", where);
  const long long rows = header_int(kv, "rows", where), cols = header_int(kv, "cols", where),
                  channels = header_int(kv, "channels", where);
  if (rows < 1 || cols < 1 || channels < 1 || rows * cols * channels > (1LL << 31)) {
    throw FormatError(where + ": implausible float map dimensions");
  }
  FloatMap m;
  m.scale = header_real(kv, "scale", where);
  if (!(m.scale > 0.0)) throw FormatError(where + ": scale must be > 0");
  for (long long c = 0; c < channels; ++c) m.channels.push_back(read_plane_f32(is, rows, cols, m.scale, where));
  expect_eof(is, where);
  return m;
}

void write_psf(const std::filesystem::path& path, const CodedPsf& psf) {
  if (psf.size() < 1) throw ParameterError("empty PSF");
  auto os = detail::open_out(path.string());
  os << "DFDPSF1\nk " << psf.size() << "\npixel_pitch " << exact(psf.pixel_pitch) << "\nreference_depth "
     << exact(psf.reference_depth) << "\nchannels R,G,B\nend\n";
  for (const auto& k : psf.kernels) write_plane_f32(os, k, 1.0);
  if (!os) throw IoError("write failed: " + path.string());
}

CodedPsf read_psf(const std::filesystem::path& path) {
  auto is = detail::open_in(path.string());
  const std::string where = path.string();
  const auto kv = read_header(is, "DFDPSF1", where);
  const long long k = header_int(kv, "k", where);
  if (k < 1 || k % 2 == 0 || k > 4095) throw FormatError(where + ": PSF size k must be odd and positive");
  if (header_field(kv, "channels", where) != "R,G,B") throw FormatError(where + ": channel order must be R,G,B");
  CodedPsf psf;
  psf.pixel_pitch = header_real(kv, "pixel_pitch", where);
  psf.reference_depth = header_real(kv, "reference_depth", where);
  for (auto& ker : psf.kernels) ker = read_plane_f32(is, k, k, 1.0, where);
  expect_eof(is, where);
  for (const auto& ker : psf.kernels) {
    if (!ker.allFinite() || ker.minCoeff() < 0.0) throw FormatError(where + ": PSF values must be finite and >= 0");
  }
  return psf;
}

// ---------------------------------------------------------------------------

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto os = detail::open_out(path.string());
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ParameterError("CSV row width does not match the header");
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << exact(r[i]);
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<double> CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != name) continue;
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[i]);
    return out;
  }
  throw ParameterError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  auto is = detail::open_in(path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty CSV");
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) t.header.push_back(cell);
  }
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": non-numeric cell on line " + std::to_string(lineno));
      }
    }
    if (row.size() != t.header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) + " has the wrong number of cells");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace dfd
