#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acquisition.hpp"
#include "grid.hpp"
#include "mobile_grappa.hpp"
#include "scene.hpp"

namespace mograppa {

using Json = nlohmann::json;

/// MGRP payload element type.
enum class Dtype : std::uint8_t
{
  Complex64 = 0, // interleaved float32 (re, im), little-endian
  Float64 = 1,   // little-endian IEEE double
};

/// In-memory MGRP array. Exactly one of `complex` / `real` is populated, per dtype.
struct MgrpArray
{
  Dtype dtype = Dtype::Complex64;
  std::vector<std::uint64_t> dims;
  std::vector<cd> complex;
  std::vector<double> real;

  std::size_t count() const;
};

/// Binary layout: "MGRP", u8 version = 1, u8 dtype, u8 ndim, u64 dims[ndim], payload.
void write_mgrp(std::filesystem::path const &path, MgrpArray const &array);
MgrpArray read_mgrp(std::filesystem::path const &path);

/// `foo.mgrp` -> `foo.json`.
std::filesystem::path sidecar_path(std::filesystem::path const &path);
void write_json(std::filesystem::path const &path, Json const &j);
Json read_json(std::filesystem::path const &path);
void write_text(std::filesystem::path const &path, std::string const &text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::uint64_t h);
/// Hash of the timeline's text form.
std::string timeline_hash(MotionTimeline const &timeline);

Json plan_to_json(SamplingPlan const &plan);
SamplingPlan plan_from_json(Json const &j);

/// k-space as [echoes, coils, ny, nx]; the sidecar carries mask, line labels and `meta`.
void write_kspace(std::filesystem::path const &path, MultiCoilKspace const &y, Json meta = Json::object());
MultiCoilKspace read_kspace(std::filesystem::path const &path, Json *meta = nullptr);

/// Stack of equally sized images as [n, ny, nx].
void write_images(std::filesystem::path const &path, std::span<ComplexGrid const> images, Json meta = Json::object());
std::vector<ComplexGrid> read_images(std::filesystem::path const &path, Json *meta = nullptr);

/// Network parameters as a Float64 vector; widths, norms, geometry, range and training
/// record go to the sidecar.
void write_family(std::filesystem::path const &path, KernelFamily const &family, Json meta = Json::object());
KernelFamily read_family(std::filesystem::path const &path, Json *meta = nullptr);

/// 8-bit grayscale PNG of `values` mapped linearly from [lo, hi] to [0, 255].
void write_png_gray(std::filesystem::path const &path, RealGrid const &values, double lo, double hi);
/// 8-bit RGB PNG; `rgb` holds width * height * 3 bytes, row-major.
void write_png_rgb(std::filesystem::path const &path, int width, int height, std::span<std::uint8_t const> rgb);

/// q-th percentile (0..100) by linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);
/// Magnitude image windowed to [0, 99.5th percentile of |img|].
void write_magnitude_png(std::filesystem::path const &path, ComplexGrid const &img);

} // namespace mograppa
