#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include "pmrf/errors.hpp"

namespace pmrf::detail {

namespace {

std::string format_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Rgb {
  std::uint8_t r, g, b;
};

// Compact viridis-like gradient, linear between anchors.
Rgb colormap(double t) {
  static constexpr double anchors[6][3] = {
      {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
      {0.164, 0.471, 0.558}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * 5.0;
  const int lo = std::min(static_cast<int>(pos), 4);
  const double frac = pos - lo;
  Rgb c;
  c.r = static_cast<std::uint8_t>(255.0 * (anchors[lo][0] + frac * (anchors[lo + 1][0] - anchors[lo][0])));
  c.g = static_cast<std::uint8_t>(255.0 * (anchors[lo][1] + frac * (anchors[lo + 1][1] - anchors[lo][1])));
  c.b = static_cast<std::uint8_t>(255.0 * (anchors[lo][2] + frac * (anchors[lo + 1][2] - anchors[lo][2])));
  return c;
}

// Uncompressed 24-bit BMP, bottom-up rows (which puts y=0 at the bottom of
// the panel, matching the domain orientation).
std::vector<std::uint8_t> encode_bmp(const Grid2D& field, double lo, double hi) {
  const int w = field.cols();
  const int h = field.rows();
  const int row_bytes = (3 * w + 3) / 4 * 4;
  const std::uint32_t payload = static_cast<std::uint32_t>(row_bytes) * h;
  const std::uint32_t file_size = 54 + payload;
  std::vector<std::uint8_t> bmp(file_size, 0);
  const auto put_u32 = [&](std::size_t off, std::uint32_t v) {
    bmp[off] = v & 0xff;
    bmp[off + 1] = (v >> 8) & 0xff;
    bmp[off + 2] = (v >> 16) & 0xff;
    bmp[off + 3] = (v >> 24) & 0xff;
  };
  bmp[0] = 'B';
  bmp[1] = 'M';
  put_u32(2, file_size);
  put_u32(10, 54);
  put_u32(14, 40);
  put_u32(18, static_cast<std::uint32_t>(w));
  put_u32(22, static_cast<std::uint32_t>(h));
  bmp[26] = 1;
  bmp[28] = 24;
  put_u32(34, payload);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int iy = 0; iy < h; ++iy) {
    const std::size_t row_off = 54 + static_cast<std::size_t>(iy) * row_bytes;
    for (int ix = 0; ix < w; ++ix) {
      const Rgb c = colormap((field(iy, ix) - lo) / span);
      bmp[row_off + 3 * ix] = c.b;
      bmp[row_off + 3 * ix + 1] = c.g;
      bmp[row_off + 3 * ix + 2] = c.r;
    }
  }
  return bmp;
}

std::string base64(const std::vector<std::uint8_t>& data) {
  static constexpr char table[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back(table[v & 63]);
  }
  if (i + 1 == data.size()) {
    const std::uint32_t v = data[i] << 16;
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == data.size()) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

void field_range(const Grid2D& field, double& lo, double& hi) {
  lo = field[0];
  hi = field[0];
  for (std::size_t i = 0; i < field.size(); ++i) {
    lo = std::min(lo, field[i]);
    hi = std::max(hi, field[i]);
  }
}

}  // namespace

void write_prediction_figure(const std::filesystem::path& path, const Grid2D& truth,
                             const Grid2D& mean, const Grid2D& stddev,
                             const std::string& title) {
  if (!truth.same_shape(mean) || !truth.same_shape(stddev)) {
    throw DimensionMismatch("write_prediction_figure: panel shapes disagree");
  }
  const int panel = 240;
  const int pad = 24;
  const int profile_h = 200;
  const int width = 3 * panel + 4 * pad;
  const int height = pad + 20 + panel + pad + profile_h + 2 * pad;

  double t_lo, t_hi;
  field_range(truth, t_lo, t_hi);
  double m_lo, m_hi;
  field_range(mean, m_lo, m_hi);
  const double shared_lo = std::min(t_lo, m_lo);
  const double shared_hi = std::max(t_hi, m_hi);
  double s_lo, s_hi;
  field_range(stddev, s_lo, s_hi);

  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw FormatError("write_prediction_figure: cannot open " + path.string());
  }
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << pad << "\" y=\"" << pad << "\" font-family=\"sans-serif\" "
      << "font-size=\"14\">" << title << "</text>\n";

  const char* names[3] = {"true pressure", "predictive mean", "predictive std"};
  const Grid2D* panels[3] = {&truth, &mean, &stddev};
  const double los[3] = {shared_lo, shared_lo, s_lo};
  const double his[3] = {shared_hi, shared_hi, s_hi};
  const int top = pad + 20;
  for (int p = 0; p < 3; ++p) {
    const int x0 = pad + p * (panel + pad);
    out << "<image x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << panel << "\" height=\""
        << panel << "\" preserveAspectRatio=\"none\" image-rendering=\"pixelated\" "
        << "xlink:href=\"data:image/bmp;base64,"
        << base64(encode_bmp(*panels[p], los[p], his[p])) << "\" "
        << "xmlns:xlink=\"http://www.w3.org/1999/xlink\"/>\n";
    out << "<text x=\"" << x0 << "\" y=\"" << top + panel + 14
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << names[p] << " ["
        << format_num(los[p]) << ", " << format_num(his[p]) << "]</text>\n";
  }

  // Mid-channel profile: truth vs mean with the +-1 sigma band.
  const int g = truth.cols();
  const int row = truth.rows() / 2;
  const int px0 = pad;
  const int py0 = top + panel + pad + 16;
  const int pw = width - 2 * pad;
  double lo = shared_lo;
  double hi = shared_hi;
  for (int ix = 0; ix < g; ++ix) {
    lo = std::min(lo, mean(row, ix) - stddev(row, ix));
    hi = std::max(hi, mean(row, ix) + stddev(row, ix));
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const auto sx = [&](int ix) { return px0 + (ix + 0.5) / g * pw; };
  const auto sy = [&](double v) { return py0 + profile_h - (v - lo) / span * profile_h; };

  out << "<polygon fill=\"#bbbbbb\" fill-opacity=\"0.55\" stroke=\"none\" points=\"";
  for (int ix = 0; ix < g; ++ix) {
    out << format_num(sx(ix)) << "," << format_num(sy(mean(row, ix) + stddev(row, ix))) << " ";
  }
  for (int ix = g - 1; ix >= 0; --ix) {
    out << format_num(sx(ix)) << "," << format_num(sy(mean(row, ix) - stddev(row, ix))) << " ";
  }
  out << "\"/>\n";
  const auto polyline = [&](const Grid2D& field, const char* color) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (int ix = 0; ix < g; ++ix) {
      out << format_num(sx(ix)) << "," << format_num(sy(field(row, ix))) << " ";
    }
    out << "\"/>\n";
  };
  polyline(mean, "#1f55a6");
  polyline(truth, "#c23b22");
  out << "<text x=\"" << px0 << "\" y=\"" << py0 + profile_h + 16
      << "\" font-family=\"sans-serif\" font-size=\"11\">mid-channel profile: truth (red), "
      << "predictive mean (blue), +-1 std band (grey)</text>\n";
  out << "</svg>\n";
}

}  // namespace pmrf::detail
