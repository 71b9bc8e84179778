#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "mograppa/evalbench.hpp"

namespace mograppa {

namespace {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
std::map<char, std::array<std::uint8_t, 7>> const &font()
{
  static std::map<char, std::array<std::uint8_t, 7>> const f = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}, {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0F}},
  };
  return f;
}

struct Rgb
{
  std::uint8_t r, g, b;
};

std::array<Rgb, 8> const palette = {Rgb{31, 119, 180}, Rgb{255, 127, 14}, Rgb{44, 160, 44},  Rgb{214, 39, 40},
                                    Rgb{148, 103, 189}, Rgb{140, 86, 75},  Rgb{227, 119, 194}, Rgb{127, 127, 127}};

class Canvas
{
public:
  Canvas(int w, int h)
    : w_(w)
    , h_(h)
    , px_(static_cast<std::size_t>(w * h * 3), 255)
  {
  }

  void dot(int x, int y, Rgb c)
  {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) {
      return;
    }
    auto const i = static_cast<std::size_t>((y * w_ + x) * 3);
    px_[i] = c.r;
    px_[i + 1] = c.g;
    px_[i + 2] = c.b;
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c)
  {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) {
        dot(x, y, c);
      }
    }
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thick = 1)
  {
    int const n = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
    for (int i = 0; i <= n; ++i) {
      double const t = static_cast<double>(i) / n;
      int const x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      int const y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      rect(x - thick / 2, y - thick / 2, x + (thick - 1) / 2, y + (thick - 1) / 2, c);
    }
  }

  /// Text with its top-left corner at (x, y); returns the advance.
  int text(int x, int y, std::string const &s, Rgb c = {0, 0, 0}, int scale = 1)
  {
    int cx = x;
    for (char ch : s) {
      char const u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      auto const it = font().find(u);
      if (it != font().end()) {
        for (int r = 0; r < 7; ++r) {
          for (int col = 0; col < 5; ++col) {
            if (it->second[static_cast<std::size_t>(r)] & (0x10 >> col)) {
              rect(cx + col * scale, y + r * scale, cx + col * scale + scale - 1, y + r * scale + scale - 1, c);
            }
          }
        }
      }
      cx += 6 * scale;
    }
    return cx - x;
  }

  static int text_width(std::string const &s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void save(std::filesystem::path const &path) const { write_png_rgb(path, w_, h_, px_); }

private:
  int w_;
  int h_;
  std::vector<std::uint8_t> px_;
};

std::string tick_label(double v)
{
  return fmt::format("{:.3g}", v);
}

void draw_chart(Chart const &chart, std::vector<ReportRow> const &all, std::filesystem::path const &path)
{
  std::vector<ReportRow> rows;
  for (auto const &r : all) {
    if (r.experiment == chart.experiment && r.method != "mlp-train") {
      rows.push_back(r);
    }
  }
  std::vector<std::string> methods;
  std::vector<double> params;
  for (auto const &r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    if (std::find(params.begin(), params.end(), r.param) == params.end()) {
      params.push_back(r.param);
    }
  }
  std::sort(params.begin(), params.end());
  auto value = [&](ReportRow const &r) { return chart.wall_time ? r.wall_time_s : r.nrmse_mean; };

  int const W = 840;
  int const H = 480;
  int const L = 70;
  int const R = 180;
  int const T = 40;
  int const B = 60;
  Canvas cv(W, H);
  cv.text((W - Canvas::text_width(chart.title, 2)) / 2, 10, chart.title, {0, 0, 0}, 2);

  double ymax = 0.0;
  for (auto const &r : rows) {
    ymax = std::max(ymax, value(r));
  }
  ymax = ymax > 0.0 ? ymax * 1.1 : 1.0;
  int const x0 = L;
  int const x1 = W - R;
  int const y0 = H - B;
  int const y1 = T;
  auto ypix = [&](double v) { return y0 - static_cast<int>(std::lround((v / ymax) * (y0 - y1))); };

  for (int i = 0; i <= 5; ++i) {
    double const v = ymax * i / 5.0;
    int const y = ypix(v);
    cv.line(x0, y, x1, y, {225, 225, 225});
    auto const lab = tick_label(v);
    cv.text(x0 - 6 - Canvas::text_width(lab), y - 3, lab);
  }
  cv.line(x0, y0, x1, y0, {0, 0, 0});
  cv.line(x0, y0, x0, y1, {0, 0, 0});
  cv.text((x0 + x1 - Canvas::text_width(chart.x_label)) / 2, H - 22, chart.x_label);
  std::string const ylab = chart.wall_time ? "wall time (s)" : "NRMSE";
  cv.text(4, T - 18, ylab);

  auto const n_groups = static_cast<int>(params.size());
  double const group_w = n_groups > 0 ? static_cast<double>(x1 - x0) / n_groups : 1.0;
  auto group_centre = [&](int g) { return x0 + static_cast<int>(std::lround((g + 0.5) * group_w)); };
  for (int g = 0; g < n_groups; ++g) {
    auto const lab = tick_label(params[static_cast<std::size_t>(g)]);
    cv.text(group_centre(g) - Canvas::text_width(lab) / 2, y0 + 8, lab);
  }

  auto const n_methods = static_cast<int>(methods.size());
  for (int mi = 0; mi < n_methods; ++mi) {
    Rgb const c = palette[static_cast<std::size_t>(mi) % palette.size()];
    int px = -1;
    int py = -1;
    for (int g = 0; g < n_groups; ++g) {
      auto const it = std::find_if(rows.begin(), rows.end(), [&](ReportRow const &r) {
        return r.method == methods[static_cast<std::size_t>(mi)] && r.param == params[static_cast<std::size_t>(g)];
      });
      if (it == rows.end()) {
        continue;
      }
      int const y = ypix(value(*it));
      if (chart.style == Chart::Style::Bars) {
        double const bw = group_w * 0.8 / std::max(1, n_methods);
        int const bx = x0 + static_cast<int>(std::lround(g * group_w + group_w * 0.1 + mi * bw));
        cv.rect(bx, y, bx + std::max(1, static_cast<int>(bw) - 2), y0 - 1, c);
        if (!chart.wall_time && it->nrmse_std > 0.0) {
          int const cx = bx + static_cast<int>(bw / 2);
          cv.line(cx, ypix(it->nrmse_mean - it->nrmse_std), cx, ypix(it->nrmse_mean + it->nrmse_std), {0, 0, 0});
        }
      } else {
        int const x = group_centre(g);
        if (px >= 0) {
          cv.line(px, py, x, y, c, 2);
        }
        cv.rect(x - 3, y - 3, x + 3, y + 3, c);
        px = x;
        py = y;
      }
    }
    int const ly = T + 10 + mi * 18;
    cv.rect(x1 + 15, ly, x1 + 27, ly + 8, c);
    cv.text(x1 + 33, ly + 1, methods[static_cast<std::size_t>(mi)]);
  }
  cv.save(path);
}

std::string slug(std::string s)
{
  for (char &c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
      c = '_';
    }
  }
  return s;
}

} // namespace

void render_report(ExperimentReport const &report, std::filesystem::path const &outdir)
{
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) {
    throw Error(fmt::format("render_report: cannot create {}: {}", outdir.string(), ec.message()));
  }
  write_text(outdir / "report.csv", format_report_csv(report.rows));
  Json prov = report.provenance;
  prov["config_hash"] = report.config_hash;
  write_json(outdir / "report.json", prov);

  for (auto const &chart : report.charts) {
    bool const clusters = chart.experiment.ends_with("-clusters");
    std::string const name = chart.wall_time ? (clusters ? "time_clusters.png" : "time.png") : "nrmse.png";
    draw_chart(chart, report.rows, outdir / name);
  }

  if (report.reference.size() == 0 || report.panels.empty()) {
    return;
  }
  std::vector<double> mags(static_cast<std::size_t>(report.reference.size()));
  for (Eigen::Index i = 0; i < report.reference.size(); ++i) {
    mags[static_cast<std::size_t>(i)] = std::abs(report.reference.data()[i]);
  }
  double const hi = percentile(mags, 99.5);
  auto const dir = outdir / "panels";
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(fmt::format("render_report: cannot create {}: {}", dir.string(), ec.message()));
  }
  write_png_gray(dir / "reference.png", report.reference.abs(), 0.0, hi);
  for (auto const &p : report.panels) {
    auto const stem = slug(fmt::format("{}_{}", p.method, p.param));
    RealGrid const mag = p.image.abs();
    write_png_gray(dir / (stem + ".png"), mag, 0.0, hi);
    // same reference and window for every method
    RealGrid const diff = 5.0 * (mag - report.reference.abs()).abs();
    write_png_gray(dir / (stem + "_diff.png"), diff, 0.0, hi);
  }
}

} // namespace mograppa
