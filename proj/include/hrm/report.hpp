// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hrm/data.hpp"
#include "hrm/error.hpp"

namespace hrm {

// Trailing mean; the first window-1 entries average what is available.
inline std::vector<double> moving_average(const std::vector<double>& series, std::size_t window) {
  if (window == 0) throw contract_error("moving_average: window must be at least 1");
  std::vector<double> out(series.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    acc += series[i];
    if (i >= window) acc -= series[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

// printf-style %.6g, independent of the global locale.
inline std::string format_g6(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s.precision(6);
  s << v;
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out << text;
  if (!out) throw io_error("short write to " + path.string());
}

// Raw per-step losses as a light trace and their moving average as a dark
// one, on a linear step axis.
inline std::string loss_plot_svg(const std::vector<double>& losses, std::size_t window,
                                 const std::string& title) {
  constexpr double w = 800, h = 420, left = 60, right = 20, top = 40, bottom = 50;
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">"
    << title << "</text>\n";
  if (losses.empty()) {
    s << "<text x=\"" << w / 2 << "\" y=\"" << h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\">no steps recorded</text>\n</svg>\n";
    return s.str();
  }
  const auto smooth = moving_average(losses, window);
  double lo = *std::min_element(losses.begin(), losses.end());
  double hi = *std::max_element(losses.begin(), losses.end());
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double pw = w - left - right, ph = h - top - bottom;
  const double n = static_cast<double>(std::max<std::size_t>(losses.size() - 1, 1));
  auto px = [&](std::size_t i) { return left + pw * static_cast<double>(i) / n; };
  auto py = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
  auto polyline = [&](const std::vector<double>& ys, const char* colour, double width,
                      double opacity) {
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"" << width
      << "\" stroke-opacity=\"" << opacity << "\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) s << px(i) << ',' << py(ys[i]) << ' ';
    s << "\"/>\n";
  };
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << format_g6(v)
      << "</text>\n";
  }
  s << "<text x=\"" << left << "\" y=\"" << h - 18
    << "\" font-family=\"sans-serif\" font-size=\"11\">step 0</text>\n"
    << "<text x=\"" << w - right << "\" y=\"" << h - 18
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">step "
    << losses.size() - 1 << "</text>\n";
  polyline(losses, "#6fa8dc", 1.0, 0.35);
  polyline(smooth, "#0b3d91", 2.0, 1.0);
  s << "<text x=\"" << w - right - 4 << "\" y=\"" << top + 16
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">moving average, window "
    << window << "</text>\n</svg>\n";
  return s.str();
}

struct error_tile {
  std::size_t index = 0;
  int truth = 0;
  int predicted = 0;
};

// Misclassified examples in evaluation order, at most max_tiles of them.
inline std::vector<error_tile> collect_errors(const std::vector<int>& predictions,
                                              const std::vector<int>& labels,
                                              std::size_t max_tiles) {
  if (predictions.size() != labels.size())
    throw dimension_error("collect_errors: " + std::to_string(predictions.size()) +
                          " predictions for " + std::to_string(labels.size()) + " labels");
  std::vector<error_tile> out;
  for (std::size_t i = 0; i < labels.size() && out.size() < max_tiles; ++i)
    if (predictions[i] != labels[i]) out.push_back({i, labels[i], predictions[i]});
  return out;
}

// Tiles of the (unstandardized) images annotated with T and P class indices.
inline std::string error_grid_svg(const dataset& d, const channel_stats& stats,
                                  const std::vector<error_tile>& tiles) {
  constexpr double cell = 3.0, pad = 6.0, caption = 14.0;
  const double tw = d.width * cell + pad, th = d.height * cell + pad + caption;
  const std::size_t cols = std::max<std::size_t>(1, std::min<std::size_t>(8, tiles.size()));
  const std::size_t rows = (tiles.size() + cols - 1) / cols;
  const double w = cols * tw + pad, h = std::max(1.0, static_cast<double>(rows)) * th + pad;
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" shape-rendering=\"crispEdges\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (tiles.empty())
    s << "<text x=\"" << pad << "\" y=\"" << h / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\">no misclassified examples</text>\n";
  auto channel = [&](std::size_t i, std::size_t c) {
    const double v = d.pixels[i] * stats.stddev[c] + stats.mean[c];
    return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const double ox = pad + (t % cols) * tw, oy = pad + (t / cols) * th;
    const auto& tile = tiles[t];
    s << "<g data-index=\"" << tile.index << "\" data-true=\"" << tile.truth
      << "\" data-pred=\"" << tile.predicted << "\">\n";
    const std::size_t base = tile.index * d.image_size();
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const std::size_t p = base + (y * d.width + x) * d.channels;
        int r, g, b;
        if (d.channels >= 3) {
          r = channel(p, 0), g = channel(p + 1, 1), b = channel(p + 2, 2);
        } else {
          r = g = b = channel(p, 0);
        }
        s << "<rect x=\"" << ox + x * cell << "\" y=\"" << oy + y * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b << ")\"/>";
      }
    s << "\n<text x=\"" << ox << "\" y=\"" << oy + d.height * cell + caption - 2
      << "\" font-family=\"monospace\" font-size=\"11\">T:" << tile.truth << " P:"
      << tile.predicted << "</text>\n</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace hrm
