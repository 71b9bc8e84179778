#include "mograppa/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <png.h>

namespace mograppa {

static_assert(std::endian::native == std::endian::little, "MGRP I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'G', 'R', 'P'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::ostream &out, T v)
{
  out.write(reinterpret_cast<char const *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream &in, std::filesystem::path const &path)
{
  T v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof(T))) {
    throw Error(fmt::format("{}: truncated MGRP header", path.string()));
  }
  return v;
}

std::ofstream open_out(std::filesystem::path const &path)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error(fmt::format("cannot open {} for writing", path.string()));
  }
  return f;
}

void close_checked(std::ofstream &f, std::filesystem::path const &path)
{
  f.flush();
  if (!f) {
    throw Error(fmt::format("write failed for {}", path.string()));
  }
  f.close();
}

std::string mask_row(Mask const &m, Eigen::Index r)
{
  std::string s(static_cast<std::size_t>(m.cols()), '0');
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (m(r, c)) {
      s[static_cast<std::size_t>(c)] = '1';
    }
  }
  return s;
}

template <typename T>
std::vector<T> json_array(Json const &j, char const *key)
{
  if (!j.contains(key)) {
    throw Error(fmt::format("sidecar is missing '{}'", key));
  }
  return j.at(key).get<std::vector<T>>();
}

} // namespace

std::size_t MgrpArray::count() const
{
  std::size_t n = 1;
  for (auto d : dims) {
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void write_mgrp(std::filesystem::path const &path, MgrpArray const &array)
{
  if (array.dims.empty() || array.dims.size() > 255) {
    throw Error(fmt::format("{}: MGRP arrays need 1 to 255 dimensions", path.string()));
  }
  std::size_t const n = array.count();
  std::size_t const have = array.dtype == Dtype::Complex64 ? array.complex.size() : array.real.size();
  if (have != n) {
    throw Error(fmt::format("{}: payload holds {} values, dims describe {}", path.string(), have, n));
  }
  auto f = open_out(path);
  f.write(kMagic, 4);
  put<std::uint8_t>(f, kVersion);
  put<std::uint8_t>(f, static_cast<std::uint8_t>(array.dtype));
  put<std::uint8_t>(f, static_cast<std::uint8_t>(array.dims.size()));
  for (auto d : array.dims) {
    put<std::uint64_t>(f, d);
  }
  if (array.dtype == Dtype::Complex64) {
    std::vector<float> buf(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      buf[2 * i] = static_cast<float>(array.complex[i].real());
      buf[2 * i + 1] = static_cast<float>(array.complex[i].imag());
    }
    f.write(reinterpret_cast<char const *>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    f.write(reinterpret_cast<char const *>(array.real.data()), static_cast<std::streamsize>(n * sizeof(double)));
  }
  close_checked(f, path);
}

MgrpArray read_mgrp(std::filesystem::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw Error(fmt::format("cannot open {}", path.string()));
  }
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(fmt::format("{}: not an MGRP file", path.string()));
  }
  auto const version = get<std::uint8_t>(f, path);
  if (version != kVersion) {
    throw Error(fmt::format("{}: unsupported MGRP version {}", path.string(), version));
  }
  auto const dtype = get<std::uint8_t>(f, path);
  if (dtype > 1) {
    throw Error(fmt::format("{}: unknown MGRP dtype {}", path.string(), dtype));
  }
  auto const ndim = get<std::uint8_t>(f, path);
  if (ndim == 0) {
    throw Error(fmt::format("{}: MGRP array has no dimensions", path.string()));
  }
  MgrpArray a;
  a.dtype = static_cast<Dtype>(dtype);
  for (int i = 0; i < ndim; ++i) {
    a.dims.push_back(get<std::uint64_t>(f, path));
  }
  std::size_t const n = a.count();
  if (a.dtype == Dtype::Complex64) {
    std::vector<float> buf(2 * n);
    if (!f.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw Error(fmt::format("{}: payload shorter than the header's {} values", path.string(), n));
    }
    a.complex.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.complex[i] = cd(buf[2 * i], buf[2 * i + 1]);
    }
  } else {
    a.real.resize(n);
    if (!f.read(reinterpret_cast<char *>(a.real.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw Error(fmt::format("{}: payload shorter than the header's {} values", path.string(), n));
    }
  }
  if (f.peek() != std::char_traits<char>::eof()) {
    throw Error(fmt::format("{}: trailing bytes after payload", path.string()));
  }
  return a;
}

std::filesystem::path sidecar_path(std::filesystem::path const &path)
{
  auto p = path;
  p.replace_extension(".json");
  return p;
}

void write_json(std::filesystem::path const &path, Json const &j)
{
  write_text(path, j.dump(2) + "\n");
}

Json read_json(std::filesystem::path const &path)
{
  std::ifstream f(path);
  if (!f) {
    throw Error(fmt::format("cannot open {}", path.string()));
  }
  try {
    return Json::parse(f);
  } catch (Json::parse_error const &e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_text(std::filesystem::path const &path, std::string const &text)
{
  auto f = open_out(path);
  f << text;
  close_checked(f, path);
}

std::uint64_t fnv1a64(std::string_view bytes)
{
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h)
{
  return fmt::format("{:016x}", h);
}

std::string timeline_hash(MotionTimeline const &timeline)
{
  return hash_hex(fnv1a64(format_timeline(timeline)));
}

Json plan_to_json(SamplingPlan const &plan)
{
  return Json{{"ny", plan.ny},         {"nx", plan.nx},           {"R", plan.R},  {"acs", plan.acs},
              {"n_shots", plan.n_shots}, {"shot_of_line", plan.shot_of_line}, {"tes", plan.tes}};
}

SamplingPlan plan_from_json(Json const &j)
{
  SamplingPlan p;
  p.ny = j.at("ny").get<Eigen::Index>();
  p.nx = j.at("nx").get<Eigen::Index>();
  p.R = j.at("R").get<int>();
  p.acs = j.at("acs").get<int>();
  p.n_shots = j.at("n_shots").get<int>();
  p.shot_of_line = json_array<int>(j, "shot_of_line");
  p.tes = json_array<double>(j, "tes");
  if (static_cast<Eigen::Index>(p.shot_of_line.size()) != p.ny) {
    throw Error("sampling plan: shot_of_line length does not match ny");
  }
  return p;
}

void write_kspace(std::filesystem::path const &path, MultiCoilKspace const &y, Json meta)
{
  MgrpArray a;
  a.dims = {static_cast<std::uint64_t>(y.n_echoes), static_cast<std::uint64_t>(y.n_coils),
            static_cast<std::uint64_t>(y.ny()), static_cast<std::uint64_t>(y.nx())};
  a.complex.reserve(a.count());
  for (auto const &g : y.data) {
    a.complex.insert(a.complex.end(), g.data(), g.data() + g.size());
  }
  write_mgrp(path, a);
  meta["kind"] = "kspace";
  meta["dims"] = a.dims;
  meta["line_shot"] = y.line_shot;
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < y.ny(); ++r) {
    rows.push_back(mask_row(y.mask, r));
  }
  meta["mask"] = rows;
  write_json(sidecar_path(path), meta);
}

MultiCoilKspace read_kspace(std::filesystem::path const &path, Json *meta)
{
  auto const a = read_mgrp(path);
  if (a.dtype != Dtype::Complex64 || a.dims.size() != 4) {
    throw Error(fmt::format("{}: expected complex [echoes, coils, ny, nx] k-space", path.string()));
  }
  Json const side = read_json(sidecar_path(path));
  auto const E = static_cast<int>(a.dims[0]);
  auto const C = static_cast<int>(a.dims[1]);
  auto const ny = static_cast<Eigen::Index>(a.dims[2]);
  auto const nx = static_cast<Eigen::Index>(a.dims[3]);
  MultiCoilKspace y(C, E, ny, nx);
  std::size_t off = 0;
  for (auto &g : y.data) {
    std::copy_n(a.complex.begin() + static_cast<std::ptrdiff_t>(off), g.size(), g.data());
    off += static_cast<std::size_t>(g.size());
  }
  auto const rows = json_array<std::string>(side, "mask");
  if (static_cast<Eigen::Index>(rows.size()) != ny) {
    throw Error(fmt::format("{}: sidecar mask has {} rows, data has {}", path.string(), rows.size(), ny));
  }
  for (Eigen::Index r = 0; r < ny; ++r) {
    auto const &row = rows[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != nx) {
      throw Error(fmt::format("{}: sidecar mask row {} has the wrong length", path.string(), r));
    }
    for (Eigen::Index c = 0; c < nx; ++c) {
      y.mask(r, c) = row[static_cast<std::size_t>(c)] == '1';
    }
  }
  y.line_shot = json_array<int>(side, "line_shot");
  if (meta != nullptr) {
    *meta = side;
  }
  return y;
}

void write_images(std::filesystem::path const &path, std::span<ComplexGrid const> images, Json meta)
{
  if (images.empty()) {
    throw Error(fmt::format("{}: no images to write", path.string()));
  }
  MgrpArray a;
  a.dims = {images.size(), static_cast<std::uint64_t>(images[0].rows()),
            static_cast<std::uint64_t>(images[0].cols())};
  for (auto const &img : images) {
    if (img.rows() != images[0].rows() || img.cols() != images[0].cols()) {
      throw Error(fmt::format("{}: images differ in size", path.string()));
    }
    a.complex.insert(a.complex.end(), img.data(), img.data() + img.size());
  }
  write_mgrp(path, a);
  meta["kind"] = meta.value("kind", "images");
  meta["dims"] = a.dims;
  write_json(sidecar_path(path), meta);
}

std::vector<ComplexGrid> read_images(std::filesystem::path const &path, Json *meta)
{
  auto const a = read_mgrp(path);
  if (a.dtype != Dtype::Complex64 || a.dims.size() != 3) {
    throw Error(fmt::format("{}: expected complex [n, ny, nx] images", path.string()));
  }
  std::vector<ComplexGrid> out;
  auto const ny = static_cast<Eigen::Index>(a.dims[1]);
  auto const nx = static_cast<Eigen::Index>(a.dims[2]);
  for (std::uint64_t i = 0; i < a.dims[0]; ++i) {
    ComplexGrid g(ny, nx);
    std::copy_n(a.complex.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::uint64_t>(ny * nx)), g.size(),
                g.data());
    out.push_back(std::move(g));
  }
  if (meta != nullptr) {
    auto const side = sidecar_path(path);
    *meta = std::filesystem::exists(side) ? read_json(side) : Json::object();
  }
  return out;
}

void write_family(std::filesystem::path const &path, KernelFamily const &family, Json meta)
{
  MgrpArray a;
  a.dtype = Dtype::Float64;
  auto const &p = family.mlp.params();
  a.dims = {static_cast<std::uint64_t>(p.size())};
  a.real.assign(p.data(), p.data() + p.size());
  write_mgrp(path, a);

  auto const &r = family.range;
  auto const &n = family.norms;
  meta["kind"] = "kernel_family";
  meta["widths"] = family.mlp.widths();
  meta["precision"] = family.mlp.precision() == Mlp::Precision::Single ? "single" : "double";
  meta["activation"] = "softplus";
  meta["geometry"] = {{"n_src", family.geom.n_src},
                      {"search_radius", family.geom.search_radius},
                      {"coils", family.geom.coils}};
  meta["norms"] = {{"pose", n.pose}, {"field", n.field},     {"kx", n.kx},
                   {"ky", n.ky},     {"octaves", n.octaves}, {"pe_base", n.pe_base}};
  meta["range"] = {{"pose_min", r.pose_min}, {"pose_max", r.pose_max}, {"field_min", r.field_min},
                   {"field_max", r.field_max}, {"te_min", r.te_min},   {"te_max", r.te_max}};
  meta["hyper"] = {{"hidden", family.hyper.hidden},
                   {"batch", family.hyper.batch},
                   {"epochs", family.hyper.epochs},
                   {"lr", family.hyper.lr},
                   {"single_precision", family.hyper.single_precision}};
  meta["signal_scale"] = family.signal_scale;
  meta["initial_loss"] = family.initial_loss;
  meta["final_loss"] = family.final_loss;
  meta["train_time_s"] = family.train_time_s;
  meta["seed"] = family.seed;
  meta["layout"] = "features: pose/norm(3), 2 pi c_i TE/norm(6), k/norm(2), per source and octave "
                   "sin/cos(pe_base 2^l o_x), sin/cos(pe_base 2^l o_y); outputs: re/im of W[c, i] at "
                   "2 (c K + i), K = n_src * coils, sources source-major";
  write_json(sidecar_path(path), meta);
}

KernelFamily read_family(std::filesystem::path const &path, Json *meta)
{
  auto const a = read_mgrp(path);
  if (a.dtype != Dtype::Float64 || a.dims.size() != 1) {
    throw Error(fmt::format("{}: expected a Float64 parameter vector", path.string()));
  }
  Json const side = read_json(sidecar_path(path));
  if (side.value("kind", "") != "kernel_family") {
    throw Error(fmt::format("{}: sidecar does not describe a kernel family", path.string()));
  }
  KernelFamily f;
  try {
    f.mlp = Mlp(side.at("widths").get<std::vector<int>>(),
                Eigen::Map<Eigen::VectorXd const>(a.real.data(), static_cast<Eigen::Index>(a.real.size())));
    f.mlp.set_precision(side.at("precision").get<std::string>() == "single" ? Mlp::Precision::Single
                                                                          : Mlp::Precision::Double);
    auto const &g = side.at("geometry");
    f.geom.n_src = g.at("n_src").get<int>();
    f.geom.search_radius = g.at("search_radius").get<double>();
    f.geom.coils = g.at("coils").get<int>();
    auto const &n = side.at("norms");
    f.norms.pose = n.at("pose").get<std::array<double, 3>>();
    f.norms.field = n.at("field").get<std::array<double, 6>>();
    f.norms.kx = n.at("kx").get<double>();
    f.norms.ky = n.at("ky").get<double>();
    f.norms.octaves = n.at("octaves").get<int>();
    f.norms.pe_base = n.at("pe_base").get<double>();
    auto const &r = side.at("range");
    f.range.pose_min = r.at("pose_min").get<std::array<double, 3>>();
    f.range.pose_max = r.at("pose_max").get<std::array<double, 3>>();
    f.range.field_min = r.at("field_min").get<std::array<double, 6>>();
    f.range.field_max = r.at("field_max").get<std::array<double, 6>>();
    f.range.te_min = r.at("te_min").get<double>();
    f.range.te_max = r.at("te_max").get<double>();
    auto const &h = side.at("hyper");
    f.hyper.hidden = h.at("hidden").get<std::vector<int>>();
    f.hyper.batch = h.at("batch").get<int>();
    f.hyper.epochs = h.at("epochs").get<int>();
    f.hyper.lr = h.at("lr").get<double>();
    f.hyper.single_precision = h.at("single_precision").get<bool>();
    f.signal_scale = side.at("signal_scale").get<double>();
    f.initial_loss = side.at("initial_loss").get<double>();
    f.final_loss = side.at("final_loss").get<double>();
    f.train_time_s = side.at("train_time_s").get<double>();
    f.seed = side.at("seed").get<std::uint64_t>();
  } catch (Json::exception const &e) {
    throw Error(fmt::format("{}: malformed kernel family sidecar: {}", path.string(), e.what()));
  }
  if (f.mlp.n_in() != feature_length(f.geom, f.norms.octaves) ||
      f.mlp.n_out() != 2 * f.geom.coils * f.kernel_width()) {
    throw Error(fmt::format("{}: network widths do not match the kernel geometry", path.string()));
  }
  if (meta != nullptr) {
    *meta = side;
  }
  return f;
}

namespace {

void write_png(std::filesystem::path const &path, int width, int height, int color_type,
               std::span<std::uint8_t const> pixels)
{
  int const channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  if (width < 1 || height < 1 ||
      pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels) {
    throw Error(fmt::format("{}: PNG buffer does not match {}x{}", path.string(), width, height));
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  FILE *fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) {
    throw Error(fmt::format("cannot open {} for writing", path.string()));
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(fmt::format("{}: libpng initialization failed", path.string()));
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(fmt::format("{}: PNG encoding failed", path.string()));
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto const stride = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(r) * stride);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) {
    throw Error(fmt::format("write failed for {}", path.string()));
  }
}

} // namespace

void write_png_gray(std::filesystem::path const &path, RealGrid const &values, double lo, double hi)
{
  double const span = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(values.size()));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      double const v = std::clamp((values(r, c) - lo) / span, 0.0, 1.0);
      px[static_cast<std::size_t>(r * values.cols() + c)] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  write_png(path, static_cast<int>(values.cols()), static_cast<int>(values.rows()), PNG_COLOR_TYPE_GRAY, px);
}

void write_png_rgb(std::filesystem::path const &path, int width, int height, std::span<std::uint8_t const> rgb)
{
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, rgb);
}

double percentile(std::vector<double> values, double q)
{
  if (values.empty()) {
    throw Error("percentile of an empty set");
  }
  std::sort(values.begin(), values.end());
  double const pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  auto const i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= values.size()) {
    return values.back();
  }
  double const t = pos - static_cast<double>(i);
  return values[i] + t * (values[i + 1] - values[i]);
}

void write_magnitude_png(std::filesystem::path const &path, ComplexGrid const &img)
{
  RealGrid const mag = img.abs();
  double const hi = percentile(std::vector<double>(mag.data(), mag.data() + mag.size()), 99.5);
  write_png_gray(path, mag, 0.0, hi);
}

} // namespace mograppa
