#pragma once

// Procedural benchmark scenes: random scatter, maze, room and warehouse
// families, plus start/goal sampling. Generation is a pure function of
// (spec, seed) and always yields connected free space.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "difflns/grid.hpp"
#include "difflns/rng.hpp"
#include "difflns/single_agent.hpp"

namespace difflns {

enum class SceneFamily { kRandom, kMaze, kRoom, kWarehouse };

inline const char* family_name(SceneFamily family) {
  switch (family) {
    case SceneFamily::kRandom: return "random";
    case SceneFamily::kMaze: return "maze";
    case SceneFamily::kRoom: return "room";
    case SceneFamily::kWarehouse: return "warehouse";
  }
  return "?";
}

inline SceneFamily family_from_name(const std::string& name) {
  if (name == "random") return SceneFamily::kRandom;
  if (name == "maze") return SceneFamily::kMaze;
  if (name == "room") return SceneFamily::kRoom;
  if (name == "warehouse") return SceneFamily::kWarehouse;
  throw std::invalid_argument("unknown scene family: " + name);
}

struct SceneSpec {
  SceneFamily family = SceneFamily::kRandom;
  int height = 10;
  int width = 10;
  double obstacle_density = 0.0;  // target fraction, [0, 1)
  int agent_count = 1;
  std::uint64_t seed = 0;
};

namespace detail {

// Flood-fill labels of the free cells; returns component count.
inline int free_components(const GridMap& map, std::vector<int>* labels_out) {
  std::vector<int> labels(map.cell_count(), -1);
  int components = 0;
  std::vector<int> stack;
  for (int idx = 0; idx < map.cell_count(); ++idx) {
    if (map.obstacle(map.cell_at(idx)) || labels[idx] != -1) continue;
    labels[idx] = components;
    stack.assign(1, idx);
    while (!stack.empty()) {
      const Cell c = map.cell_at(stack.back());
      stack.pop_back();
      for (int a = 1; a < kNumActions; ++a) {
        const Cell nb = displaced(c, static_cast<Action>(a));
        if (!map.free(nb)) continue;
        const int ni = map.index(nb);
        if (labels[ni] == -1) {
          labels[ni] = components;
          stack.push_back(ni);
        }
      }
    }
    ++components;
  }
  if (labels_out) *labels_out = std::move(labels);
  return components;
}

inline bool free_space_connected(const GridMap& map) {
  return map.free_count() > 0 && free_components(map, nullptr) <= 1;
}

// Clears obstacles along a straight L-route between two cells.
inline void carve_route(GridMap& map, Cell from, Cell to) {
  Cell cur = from;
  while (cur.row != to.row) {
    cur.row += (to.row > cur.row) ? 1 : -1;
    map.set_obstacle(cur, false);
  }
  while (cur.col != to.col) {
    cur.col += (to.col > cur.col) ? 1 : -1;
    map.set_obstacle(cur, false);
  }
}

inline void connect_components(GridMap& map) {
  std::vector<int> labels;
  while (free_components(map, &labels) > 1) {
    Cell main{-1, -1}, stray{-1, -1};
    for (int idx = 0; idx < map.cell_count(); ++idx) {
      if (labels[idx] == 0 && main.row < 0) main = map.cell_at(idx);
      if (labels[idx] > 0 && stray.row < 0) stray = map.cell_at(idx);
    }
    carve_route(map, stray, main);
  }
}

// Frees random obstacle cells that touch free space until the obstacle count
// drops to `target`; keeps connectivity by construction.
inline void erode_to_target(GridMap& map, long long target, Rng& rng) {
  while (map.cell_count() - map.free_count() > target) {
    std::vector<int> candidates;
    for (int idx = 0; idx < map.cell_count(); ++idx) {
      const Cell c = map.cell_at(idx);
      if (!map.obstacle(c)) continue;
      for (int a = 1; a < kNumActions; ++a) {
        if (map.free(displaced(c, static_cast<Action>(a)))) {
          candidates.push_back(idx);
          break;
        }
      }
    }
    if (candidates.empty()) break;
    map.set_obstacle(map.cell_at(candidates[rng.next_below(candidates.size())]),
                     false);
  }
}

// Adds obstacle clutter toward `target` wherever the free space stays
// connected. Best effort: gives up on cells whose removal would split the map.
inline void clutter_to_target(GridMap& map, long long target, Rng& rng) {
  long long attempts = 20 * (target - (map.cell_count() - map.free_count()));
  while (map.cell_count() - map.free_count() < target && attempts-- > 0) {
    const auto free = map.free_cells();
    if (free.size() <= 1) break;
    const Cell pick = free[rng.next_below(free.size())];
    map.set_obstacle(pick, true);
    if (!free_space_connected(map)) map.set_obstacle(pick, false);
  }
}

inline GridMap generate_random_map(const SceneSpec& spec) {
  const long long cells = static_cast<long long>(spec.height) * spec.width;
  const long long target = std::llround(spec.obstacle_density * cells);
  for (int attempt = 0; attempt < 24; ++attempt) {
    Rng rng(mix_seed(spec.seed, 0x7261u, attempt));
    GridMap map(spec.height, spec.width);
    std::vector<int> order(cells);
    for (long long i = 0; i < cells; ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    for (long long i = 0; i < std::min(target, cells - 1); ++i)
      map.set_obstacle(map.cell_at(order[i]), true);
    connect_components(map);
    const double measured =
        1.0 - static_cast<double>(map.free_count()) / cells;
    if (std::abs(measured - spec.obstacle_density) <= 0.03) return map;
  }
  throw std::runtime_error(
      "generate_map: random target density incompatible with connectivity");
}

inline GridMap generate_maze_map(const SceneSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x6d7au));
  const int height = spec.height, width = spec.width;
  if (height < 3 || width < 3) return GridMap(height, width);
  GridMap map(height, width,
              std::vector<std::uint8_t>(
                  static_cast<std::size_t>(height) * width, 1));
  // Recursive backtracker over the odd-coordinate room lattice.
  const int rooms_h = (height - 1) / 2;
  const int rooms_w = (width - 1) / 2;
  const auto room_cell = [](int rr, int rc) { return Cell{2 * rr + 1, 2 * rc + 1}; };
  std::vector<std::uint8_t> visited(
      static_cast<std::size_t>(rooms_h) * rooms_w, 0);
  std::vector<std::pair<int, int>> stack;
  stack.push_back({static_cast<int>(rng.next_below(rooms_h)),
                   static_cast<int>(rng.next_below(rooms_w))});
  visited[stack.back().first * rooms_w + stack.back().second] = 1;
  map.set_obstacle(room_cell(stack.back().first, stack.back().second), false);
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!stack.empty()) {
    const auto [rr, rc] = stack.back();
    std::vector<int> unvisited;
    for (int k = 0; k < 4; ++k) {
      const int nr = rr + dr[k], nc = rc + dc[k];
      if (nr < 0 || nr >= rooms_h || nc < 0 || nc >= rooms_w) continue;
      if (!visited[nr * rooms_w + nc]) unvisited.push_back(k);
    }
    if (unvisited.empty()) {
      stack.pop_back();
      continue;
    }
    const int k = unvisited[rng.next_below(unvisited.size())];
    const int nr = rr + dr[k], nc = rc + dc[k];
    visited[nr * rooms_w + nc] = 1;
    map.set_obstacle(room_cell(nr, nc), false);
    map.set_obstacle(Cell{room_cell(rr, rc).row + dr[k],
                          room_cell(rr, rc).col + dc[k]},
                     false);  // carve the wall between the rooms
    stack.push_back({nr, nc});
  }
  // A perfect maze is far denser than the benchmark band; remove walls that
  // touch free space until the target density is met.
  const long long cells = static_cast<long long>(height) * width;
  detail::erode_to_target(map, std::llround(spec.obstacle_density * cells), rng);
  return map;
}

inline GridMap generate_room_map(const SceneSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x726fu));
  const int height = spec.height, width = spec.width;
  GridMap map(height, width);
  const int period = 5;  // 4-cell rooms separated by 1-cell walls
  const auto is_wall_line = [&](int coord, int extent) {
    return coord % period == period - 1 && coord < extent - 1;
  };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (is_wall_line(r, height) || is_wall_line(c, width))
        map.set_obstacle(Cell{r, c}, true);
  // One door per wall segment between intersections.
  const auto carve_doors = [&](bool horizontal) {
    const int lines = horizontal ? height : width;
    const int extent = horizontal ? width : height;
    for (int line = period - 1; line < lines - 1; line += period) {
      int segment_start = 0;
      for (int pos = 0; pos <= extent; ++pos) {
        const bool at_cross = pos == extent || is_wall_line(pos, extent);
        if (!at_cross) continue;
        if (pos > segment_start) {
          const int door =
              segment_start + static_cast<int>(rng.next_below(
                                  static_cast<std::uint64_t>(pos - segment_start)));
          map.set_obstacle(horizontal ? Cell{line, door} : Cell{door, line},
                           false);
        }
        segment_start = pos + 1;
      }
    }
  };
  carve_doors(true);
  carve_doors(false);
  connect_components(map);
  const long long cells = static_cast<long long>(height) * width;
  const long long target = std::llround(spec.obstacle_density * cells);
  if (map.cell_count() - map.free_count() < target)
    clutter_to_target(map, target, rng);
  else
    erode_to_target(map, target, rng);
  return map;
}

// Fixed shelf template: two-row shelf bands split by one-cell aisle columns.
// On 25x25 this yields 216 obstacles, a 34.6% density.
inline GridMap generate_warehouse_map(const SceneSpec& spec) {
  GridMap map(spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c)
      if ((r % 4 == 1 || r % 4 == 2) && c % 4 != 0)
        map.set_obstacle(Cell{r, c}, true);
  return map;
}

}  // namespace detail

inline GridMap generate_map(const SceneSpec& spec) {
  if (spec.height < 1 || spec.width < 1)
    throw std::invalid_argument("generate_map: empty dimensions");
  if (spec.obstacle_density < 0.0 || spec.obstacle_density >= 1.0)
    throw std::invalid_argument("generate_map: density must be in [0, 1)");
  GridMap map(1, 1);
  switch (spec.family) {
    case SceneFamily::kRandom: map = detail::generate_random_map(spec); break;
    case SceneFamily::kMaze: map = detail::generate_maze_map(spec); break;
    case SceneFamily::kRoom: map = detail::generate_room_map(spec); break;
    case SceneFamily::kWarehouse: map = detail::generate_warehouse_map(spec); break;
  }
  if (!detail::free_space_connected(map))
    throw std::runtime_error("generate_map: produced disconnected free space");
  return map;
}

// Distinct starts, distinct goals, every goal reachable from its start.
inline Instance sample_instance(const GridMap& map, int agents, int horizon,
                                std::uint64_t seed) {
  if (agents < 1) throw std::invalid_argument("sample_instance: agents < 1");
  if (agents > map.free_count())
    throw std::invalid_argument("sample_instance: more agents than free cells");
  Rng rng(mix_seed(seed, 0x696e73u));
  const auto free = map.free_cells();
  std::vector<int> order(free.size());
  for (std::size_t i = 0; i < free.size(); ++i) order[i] = static_cast<int>(i);

  Instance instance;
  instance.map = map;
  instance.horizon = horizon > 0 ? horizon : default_horizon(map);
  rng.shuffle(order);
  for (int i = 0; i < agents; ++i) instance.starts.push_back(free[order[i]]);

  for (int attempt = 0; attempt < 16; ++attempt) {
    rng.shuffle(order);
    instance.goals.clear();
    for (int i = 0; i < agents; ++i) instance.goals.push_back(free[order[i]]);
    bool all_reachable = true;
    for (int i = 0; i < agents && all_reachable; ++i) {
      const auto field = bfs_distance_map(map, instance.goals[i]);
      all_reachable = field.reachable(instance.starts[i]);
    }
    if (all_reachable) {
      validate_instance(instance);
      return instance;
    }
  }
  throw std::runtime_error(
      "sample_instance: could not find mutually reachable starts and goals");
}

// Global agent-density feature rho = log(1 + N / |V_free|).
inline double density_feature(int agents, int free_cells) {
  if (free_cells <= 0)
    throw std::invalid_argument("density_feature: no free cells");
  return std::log1p(static_cast<double>(agents) / free_cells);
}

inline double density_feature(const Instance& instance) {
  return density_feature(instance.agent_count(), instance.map.free_count());
}

}  // namespace difflns
