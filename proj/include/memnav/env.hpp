#pragma once

// Grid-maze simulator with a first-person raycast camera.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "memnav/error.hpp"
#include "memnav/rng.hpp"

namespace memnav {

enum class Cell : std::uint8_t { kFree = 0, kWall = 1 };

enum class Action : int { kForward = 0, kTurnLeft = 1, kTurnRight = 2 };
inline constexpr int kNumActions = 3;

inline const char* action_name(Action a) {
  switch (a) {
    case Action::kForward: return "forward";
    case Action::kTurnLeft: return "left";
    case Action::kTurnRight: return "right";
  }
  return "?";
}

// heading counts quarter turns counter-clockwise from +x: 0 -> 0 deg, 1 -> 90 deg, ...
struct Pose {
  int x = 0;
  int y = 0;
  int heading = 0;

  int degrees() const { return heading * 90; }
  bool same_cell(const Pose& o) const { return x == o.x && y == o.y; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

inline constexpr std::array<int, 4> kHeadingDx = {1, 0, -1, 0};
inline constexpr std::array<int, 4> kHeadingDy = {0, 1, 0, -1};

using Color = std::array<double, 3>;

class MazeMap {
 public:
  MazeMap() = default;
  MazeMap(int width, int height, std::vector<Cell> cells, Pose start, std::uint64_t seed)
      : width_(width), height_(height), cells_(std::move(cells)), start_(start), seed_(seed) {
    palette_.resize(cells_.size());
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) palette_[index(x, y)] = palette_color(seed_, x, y);
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  const Pose& start() const { return start_; }
  std::uint64_t seed() const { return seed_; }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool is_free(int x, int y) const { return in_bounds(x, y) && cells_[index(x, y)] == Cell::kFree; }
  int index(int x, int y) const { return y * width_ + x; }
  int cell_count() const { return width_ * height_; }

  const Color& wall_color(int x, int y) const { return palette_[index(x, y)]; }

  int free_count() const {
    int n = 0;
    for (Cell c : cells_) n += c == Cell::kFree;
    return n;
  }

  std::vector<std::pair<int, int>> free_cells() const {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (is_free(x, y)) out.emplace_back(x, y);
    return out;
  }

  // Copy with every wall painted one color. Breaks the seeded-palette property,
  // so it is meant for geometry checks only.
  MazeMap with_uniform_palette(const Color& c) const {
    MazeMap m = *this;
    for (auto& p : m.palette_) p = c;
    return m;
  }

  // Channels land in [0.15, 1] so even the darkest wall stays visible at range.
  static Color palette_color(std::uint64_t seed, int x, int y) {
    std::uint64_t h = Rng::mix(seed ^ Rng::mix((static_cast<std::uint64_t>(x) << 32) ^
                                               static_cast<std::uint64_t>(y) ^ 0x5bd1e995ULL));
    Color c{};
    for (double& v : c) {
      h = Rng::mix(h);
      v = 0.15 + 0.85 * static_cast<double>(h >> 11) * 0x1.0p-53;
    }
    return c;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Cell> cells_;
  std::vector<Color> palette_;
  Pose start_;
  std::uint64_t seed_ = 0;
};

// Ray-major strip: values[ray * 3 + channel].
struct Observation {
  int rays = 0;
  std::vector<double> values;

  double at(int ray, int channel) const { return values[ray * 3 + channel]; }
  friend bool operator==(const Observation&, const Observation&) = default;
};

inline constexpr int kDefaultRays = 64;

// BFS distances (4-connected, free cells only) from one cell; -1 marks unreachable.
inline std::vector<int> distance_field(const MazeMap& map, int sx, int sy) {
  std::vector<int> dist(map.cell_count(), -1);
  if (!map.is_free(sx, sy)) return dist;
  std::deque<std::pair<int, int>> queue;
  dist[map.index(sx, sy)] = 0;
  queue.emplace_back(sx, sy);
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    for (int h = 0; h < 4; ++h) {
      int nx = x + kHeadingDx[h], ny = y + kHeadingDy[h];
      if (map.is_free(nx, ny) && dist[map.index(nx, ny)] < 0) {
        dist[map.index(nx, ny)] = dist[map.index(x, y)] + 1;
        queue.emplace_back(nx, ny);
      }
    }
  }
  return dist;
}

// Parses the ASCII grammar: '#' wall, '.' free, 'S' start (heading 0).
inline MazeMap load_map(std::string_view text, std::uint64_t map_seed) {
  std::vector<std::string> rows;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(line);
  }
  while (!rows.empty() && rows.back().empty()) rows.pop_back();
  if (rows.empty()) throw ParseError("empty map document");

  const int height = static_cast<int>(rows.size());
  const int width = static_cast<int>(rows.front().size());
  if (width < 3 || height < 3) throw ParseError("map must be at least 3x3");

  std::vector<Cell> cells(static_cast<std::size_t>(width) * height, Cell::kWall);
  int starts = 0;
  Pose start;
  for (int y = 0; y < height; ++y) {
    const std::string& row = rows[y];
    if (static_cast<int>(row.size()) != width) {
      throw ParseError("ragged row " + std::to_string(y) + ": expected " + std::to_string(width) +
                       " columns, got " + std::to_string(row.size()));
    }
    for (int x = 0; x < width; ++x) {
      const char ch = row[x];
      const bool border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
      switch (ch) {
        case '#': break;
        case '.':
        case 'S':
          if (border) {
            throw ParseError("border cell (" + std::to_string(x) + "," + std::to_string(y) +
                             ") must be '#'");
          }
          cells[y * width + x] = Cell::kFree;
          if (ch == 'S') {
            ++starts;
            start = Pose{x, y, 0};
          }
          break;
        default:
          throw ParseError(std::string("unexpected character '") + ch + "' at (" +
                           std::to_string(x) + "," + std::to_string(y) + ")");
      }
    }
  }
  if (starts == 0) throw MissingStart("map has no 'S' start marker");
  if (starts > 1) throw ParseError("map has more than one 'S' start marker");

  MazeMap map(width, height, std::move(cells), start, map_seed);
  const auto dist = distance_field(map, start.x, start.y);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (map.is_free(x, y) && dist[map.index(x, y)] < 0) {
        throw DisconnectedMap("free cell (" + std::to_string(x) + "," + std::to_string(y) +
                              ") is not reachable from the start");
      }
    }
  }
  return map;
}

inline MazeMap load_map_file(const std::string& path, std::uint64_t map_seed) {
  std::ifstream f(path);
  if (!f) throw ParseError("map not found: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_map(ss.str(), map_seed);
}

inline Pose step(const MazeMap& map, const Pose& pose, Action action) {
  Pose next = pose;
  switch (action) {
    case Action::kForward: {
      const int nx = pose.x + kHeadingDx[pose.heading];
      const int ny = pose.y + kHeadingDy[pose.heading];
      if (map.is_free(nx, ny)) {
        next.x = nx;
        next.y = ny;
      }
      break;
    }
    case Action::kTurnLeft: next.heading = (pose.heading + 1) % 4; break;
    case Action::kTurnRight: next.heading = (pose.heading + 3) % 4; break;
  }
  return next;
}

// Renders W rays spread over a 90 degree field of view. The camera sits at the
// midpoint of the rear edge of the agent's cell; ray 0 is the leftmost.
class Renderer {
 public:
  explicit Renderer(int rays = kDefaultRays) : rays_(rays) {
    local_dirs_.reserve(rays);
    for (int i = 0; i < rays; ++i) {
      const double phi = std::numbers::pi / 4.0 - (std::numbers::pi / 2.0) * (i + 0.5) / rays;
      local_dirs_.push_back({std::cos(phi), std::sin(phi)});
    }
  }

  int rays() const { return rays_; }

  Observation render(const MazeMap& map, const Pose& pose) const {
    Observation obs;
    obs.rays = rays_;
    obs.values.resize(static_cast<std::size_t>(rays_) * 3);
    const double ox = pose.x + 0.5 - 0.5 * kHeadingDx[pose.heading];
    const double oy = pose.y + 0.5 - 0.5 * kHeadingDy[pose.heading];
    for (int i = 0; i < rays_; ++i) {
      // Exact quarter-turn rotation keeps the four headings bitwise symmetric.
      double dx = local_dirs_[i][0], dy = local_dirs_[i][1];
      for (int r = 0; r < pose.heading; ++r) {
        const double t = dx;
        dx = -dy;
        dy = t;
      }
      int hx = 0, hy = 0;
      const double d = cast(map, pose.x, pose.y, ox, oy, dx, dy, hx, hy);
      const double shade = 1.0 / (1.0 + d);
      const Color& c = map.wall_color(hx, hy);
      for (int ch = 0; ch < 3; ++ch) obs.values[i * 3 + ch] = c[ch] * shade;
    }
    return obs;
  }

 private:
  // Grid traversal from an explicit start cell; returns the distance to the first wall.
  static double cast(const MazeMap& map, int cx, int cy, double ox, double oy, double dx,
                     double dy, int& hit_x, int& hit_y) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
    const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    double t_max_x = dx > 0 ? (cx + 1 - ox) / dx : (dx < 0 ? (cx - ox) / dx : kInf);
    double t_max_y = dy > 0 ? (cy + 1 - oy) / dy : (dy < 0 ? (cy - oy) / dy : kInf);
    const double t_delta_x = step_x != 0 ? 1.0 / std::abs(dx) : kInf;
    const double t_delta_y = step_y != 0 ? 1.0 / std::abs(dy) : kInf;
    double t = 0.0;
    for (;;) {
      if (t_max_x < t_max_y) {
        cx += step_x;
        t = t_max_x;
        t_max_x += t_delta_x;
      } else {
        cy += step_y;
        t = t_max_y;
        t_max_y += t_delta_y;
      }
      if (!map.in_bounds(cx, cy) || !map.is_free(cx, cy)) {
        hit_x = std::clamp(cx, 0, map.width() - 1);
        hit_y = std::clamp(cy, 0, map.height() - 1);
        return t;
      }
    }
  }

  int rays_;
  std::vector<std::array<double, 2>> local_dirs_;
};

inline Observation render(const MazeMap& map, const Pose& pose, int rays = kDefaultRays) {
  return Renderer(rays).render(map, pose);
}

// Grid shortest-path length between the cells of two poses; heading is ignored.
inline int oracle_distance(const MazeMap& map, const Pose& a, const Pose& b) {
  if (a.same_cell(b)) return 0;
  return distance_field(map, a.x, a.y)[map.index(b.x, b.y)];
}

}  // namespace memnav
