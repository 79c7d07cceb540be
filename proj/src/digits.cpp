#include "pkkd/digits.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace pkkd {

namespace {

struct Pt {
  double x, y;
};

using Stroke = std::vector<Pt>;  // polyline in the unit square, y grows down

std::vector<Stroke> arc(double cx, double cy, double rx, double ry, double a0, double a1,
                        int segs = 10) {
  Stroke s;
  for (int i = 0; i <= segs; ++i) {
    double a = a0 + (a1 - a0) * i / segs;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return {s};
}

void append(std::vector<Stroke>& dst, std::vector<Stroke> src) {
  for (auto& s : src) dst.push_back(std::move(s));
}

/// Stroke skeletons, loosely following how the digits are written by hand.
std::vector<Stroke> glyph(int digit) {
  const double pi = M_PI;
  std::vector<Stroke> g;
  switch (digit) {
    case 0:
      append(g, arc(0.5, 0.5, 0.30, 0.40, 0, 2 * pi, 20));
      break;
    case 1:
      g.push_back({{0.35, 0.28}, {0.55, 0.10}, {0.55, 0.90}});
      break;
    case 2:
      append(g, arc(0.5, 0.30, 0.28, 0.22, -pi, 0.25 * pi, 12));
      g.push_back({{0.72, 0.45}, {0.25, 0.88}, {0.78, 0.88}});
      break;
    case 3:
      append(g, arc(0.48, 0.30, 0.26, 0.20, -0.75 * pi, 0.5 * pi, 12));
      append(g, arc(0.48, 0.70, 0.28, 0.21, -0.5 * pi, 0.75 * pi, 12));
      break;
    case 4:
      g.push_back({{0.62, 0.90}, {0.62, 0.10}, {0.22, 0.62}, {0.80, 0.62}});
      break;
    case 5:
      g.push_back({{0.72, 0.12}, {0.32, 0.12}, {0.30, 0.48}});
      append(g, arc(0.48, 0.66, 0.26, 0.22, -0.55 * pi, 0.8 * pi, 12));
      break;
    case 6:
      g.push_back({{0.62, 0.10}, {0.36, 0.45}});
      append(g, arc(0.5, 0.66, 0.24, 0.24, -pi, pi, 16));
      break;
    case 7:
      g.push_back({{0.24, 0.12}, {0.76, 0.12}, {0.42, 0.90}});
      break;
    case 8:
      append(g, arc(0.5, 0.30, 0.22, 0.19, 0, 2 * pi, 14));
      append(g, arc(0.5, 0.70, 0.26, 0.22, 0, 2 * pi, 14));
      break;
    case 9:
      append(g, arc(0.5, 0.34, 0.24, 0.24, 0, 2 * pi, 16));
      g.push_back({{0.74, 0.40}, {0.60, 0.90}});
      break;
    default:
      throw DataError("glyph digit out of range");
  }
  return g;
}

double seg_dist(double px, double py, Pt a, Pt b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = px - a.x, wy = py - a.y;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

void render_sample(int digit, SplitMix64& rng, std::uint8_t* out /* 28*28 */) {
  const int n = 28;
  auto strokes = glyph(digit);

  double angle = rng.uniform(-0.22, 0.22);
  double scale = rng.uniform(0.8, 1.12);
  double shear = rng.uniform(-0.18, 0.18);
  double dx = rng.uniform(-0.09, 0.09);
  double dy = rng.uniform(-0.09, 0.09);
  double thick = rng.uniform(0.045, 0.075);  // stroke radius, unit square
  double ink = rng.uniform(0.75, 1.0);
  double noise = 0.05;

  double ca = std::cos(angle), sa = std::sin(angle);
  auto tf = [&](Pt p) {
    double x = (p.x - 0.5) * scale, y = (p.y - 0.5) * scale;
    x += shear * y;
    double xr = ca * x - sa * y, yr = sa * x + ca * y;
    return Pt{xr + 0.5 + dx, yr + 0.5 + dy};
  };
  std::vector<Stroke> placed;
  for (const Stroke& s : strokes) {
    Stroke t;
    for (Pt p : s) t.push_back(tf(p));
    placed.push_back(std::move(t));
  }

  for (int yy = 0; yy < n; ++yy)
    for (int xx = 0; xx < n; ++xx) {
      double px = (xx + 0.5) / n, py = (yy + 0.5) / n;
      double d = 1e9;
      for (const Stroke& s : placed)
        for (size_t i = 0; i + 1 < s.size(); ++i)
          d = std::min(d, seg_dist(px, py, s[i], s[i + 1]));
      double v = std::clamp((thick - d) / (0.55 / n) + 0.5, 0.0, 1.0) * ink;
      v += rng.normal(0.0, noise);
      out[yy * n + xx] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    }
}

}  // namespace

RawImages render_digit_corpus(Index count, std::uint64_t seed,
                              std::vector<std::uint8_t>* labels_out) {
  RawImages imgs;
  imgs.n = count;
  imgs.h = 28;
  imgs.w = 28;
  imgs.c = 1;
  imgs.pixels.resize(static_cast<size_t>(count) * 28 * 28);
  labels_out->resize(static_cast<size_t>(count));
  for (Index i = 0; i < count; ++i) {
    SplitMix64 rng(derive_seed(seed, "digit" + std::to_string(i)));
    int digit = static_cast<int>(rng.next() % 10);
    (*labels_out)[static_cast<size_t>(i)] = static_cast<std::uint8_t>(digit);
    render_sample(digit, rng, imgs.pixels.data() + static_cast<size_t>(i) * 28 * 28);
  }
  return imgs;
}

void write_digit_corpus(const std::string& dir, Index train_count, Index test_count,
                        std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> labels;
  RawImages train = render_digit_corpus(train_count, derive_seed(seed, "train"), &labels);
  write_idx_images((std::filesystem::path(dir) / "train-images-idx3-ubyte").string(), train);
  write_idx_labels((std::filesystem::path(dir) / "train-labels-idx1-ubyte").string(), labels);
  RawImages test = render_digit_corpus(test_count, derive_seed(seed, "test"), &labels);
  write_idx_images((std::filesystem::path(dir) / "t10k-images-idx3-ubyte").string(), test);
  write_idx_labels((std::filesystem::path(dir) / "t10k-labels-idx1-ubyte").string(), labels);
}

}  // namespace pkkd
