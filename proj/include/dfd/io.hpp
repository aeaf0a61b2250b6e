#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfd/optics.hpp"
#include "dfd/types.hpp"

namespace dfd {

// PNG, 8 or 16 bits per sample. Values are clamped to [0, 1] and rounded to
// the nearest code. Reading accepts gray/RGB with or without alpha.
void write_png(const std::filesystem::path& path, const Rgb& image, int bit_depth = 8);
void write_png_gray(const std::filesystem::path& path, const Plane& image, int bit_depth = 8);
Rgb read_png(const std::filesystem::path& path);

/// Float map file:
///   DFDMAP1
///   rows <H>
///   cols <W>
///   channels <C>
///   scale <s>
///   end
/// followed by C * H * W little-endian float32 (channel-planar, row-major).
/// Stored values are value / scale.
struct FloatMap {
  std::vector<Plane> channels;
  double scale = 1.0;
};
void write_float_map(const std::filesystem::path& path, const FloatMap& map);
FloatMap read_float_map(const std::filesystem::path& path);

/// PSF container: DFDPSF1 header (k, pixel_pitch, reference_depth, channel
/// order R,G,B) then 3 k x k little-endian float32 kernels.
void write_psf(const std::filesystem::path& path, const CodedPsf& psf);
CodedPsf read_psf(const std::filesystem::path& path);

/// Comma-separated table, doubles printed round-trip exact.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<double> column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace dfd
