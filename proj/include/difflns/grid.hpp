#pragma once

// Grid MAPF semantics: maps, actions, instances, plans, conflicts and costs.
// Everything here is immutable after construction and safe to share across
// threads.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace difflns {

struct Cell {
  int row = 0;
  int col = 0;
};

inline bool operator==(Cell a, Cell b) { return a.row == b.row && a.col == b.col; }
inline bool operator!=(Cell a, Cell b) { return !(a == b); }
inline bool operator<(Cell a, Cell b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

// The five grid actions. `up` decreases the row index.
enum class Action : int { kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };

inline constexpr int kNumActions = 5;

inline constexpr std::array<std::array<int, 2>, kNumActions> kActionDelta{{
    {0, 0},    // stay
    {-1, 0},   // up
    {1, 0},    // down
    {0, -1},   // left
    {0, 1},    // right
}};

inline Cell displaced(Cell pos, Action a) {
  const auto& d = kActionDelta[static_cast<int>(a)];
  return Cell{pos.row + d[0], pos.col + d[1]};
}

class GridMap {
 public:
  GridMap() : GridMap(1, 1) {}

  GridMap(int height, int width)
      : height_(height), width_(width),
        cells_(static_cast<std::size_t>(height) * width, 0) {
    if (height < 1 || width < 1) throw std::invalid_argument("GridMap: empty dimensions");
    free_count_ = height_ * width_;
  }

  GridMap(int height, int width, const std::vector<std::uint8_t>& obstacles)
      : GridMap(height, width) {
    if (obstacles.size() != cells_.size())
      throw std::invalid_argument("GridMap: obstacle vector size mismatch");
    cells_ = obstacles;
    free_count_ = 0;
    for (const auto c : cells_) free_count_ += (c == 0);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int cell_count() const { return height_ * width_; }
  int free_count() const { return free_count_; }

  int index(Cell c) const { return c.row * width_ + c.col; }
  Cell cell_at(int index) const { return Cell{index / width_, index % width_}; }

  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_;
  }
  bool obstacle(Cell c) const { return cells_[index(c)] != 0; }
  bool free(Cell c) const { return in_bounds(c) && !obstacle(c); }

  void set_obstacle(Cell c, bool value) {
    const auto i = index(c);
    if (cells_[i] != static_cast<std::uint8_t>(value)) {
      free_count_ += value ? -1 : 1;
      cells_[i] = static_cast<std::uint8_t>(value);
    }
  }

  std::vector<Cell> free_cells() const {
    std::vector<Cell> cells;
    cells.reserve(free_count_);
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        if (!cells_[r * width_ + c]) cells.push_back(Cell{r, c});
    return cells;
  }

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> cells_;  // nonzero = obstacle
  int free_count_;
};

// Move application. An out-of-bounds or obstacle target is reported as
// "no value"; the caller decides the fallback.
inline std::optional<Cell> apply_action(Cell pos, Action a, const GridMap& map) {
  const Cell next = displaced(pos, a);
  if (!map.in_bounds(next) || map.obstacle(next)) return std::nullopt;
  return next;
}

inline int default_horizon(const GridMap& map) {
  return 2 * (map.height() + map.width());
}

struct Instance {
  GridMap map;
  std::vector<Cell> starts;
  std::vector<Cell> goals;
  int horizon = 0;

  int agent_count() const { return static_cast<int>(starts.size()); }
};

using Path = std::vector<Cell>;

struct Plan {
  std::vector<Path> paths;

  int agent_count() const { return static_cast<int>(paths.size()); }
};

struct VertexConflict {
  int agent_a = 0;  // agent_a < agent_b
  int agent_b = 0;
  int time = 0;
  Cell cell;
};

struct EdgeConflict {
  int agent_a = 0;  // agent_a < agent_b
  int agent_b = 0;
  int time = 0;  // swap happens between `time` and `time + 1`
};

struct ConflictReport {
  std::vector<VertexConflict> vertex_conflicts;
  std::vector<EdgeConflict> edge_conflicts;
  int colliding_pairs = 0;

  bool empty() const { return vertex_conflicts.empty() && edge_conflicts.empty(); }
};

namespace detail {

inline std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

inline Cell padded_position(const Path& path, std::size_t t) {
  return t < path.size() ? path[t] : path.back();
}

}  // namespace detail

// Enumerates all vertex and edge conflicts of a plan. Agents rest at their
// final cell beyond the end of their path.
inline ConflictReport detect_conflicts(const Plan& plan) {
  ConflictReport report;
  const int n = plan.agent_count();
  if (n == 0) return report;
  std::size_t horizon = 0;
  for (const auto& path : plan.paths) {
    if (path.empty()) throw std::invalid_argument("detect_conflicts: empty path");
    horizon = std::max(horizon, path.size());
  }

  std::unordered_set<std::uint64_t> pairs;
  // Vertex conflicts: group agents by occupied cell per timestep.
  std::unordered_map<std::uint64_t, std::vector<int>> occupants;
  for (std::size_t t = 0; t < horizon; ++t) {
    occupants.clear();
    for (int i = 0; i < n; ++i) {
      const Cell c = detail::padded_position(plan.paths[i], t);
      const std::uint64_t key =
          (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.row)) << 32) |
          static_cast<std::uint32_t>(c.col);
      occupants[key].push_back(i);
    }
    for (const auto& [key, agents] : occupants) {
      if (agents.size() < 2) continue;
      for (std::size_t a = 0; a < agents.size(); ++a)
        for (std::size_t b = a + 1; b < agents.size(); ++b) {
          const int i = agents[a], j = agents[b];
          report.vertex_conflicts.push_back(VertexConflict{
              i, j, static_cast<int>(t),
              detail::padded_position(plan.paths[i], t)});
          pairs.insert(detail::pair_key(i, j));
        }
    }
  }
  // Edge conflicts: two agents traversing the same edge in opposite
  // directions between t and t+1.
  std::unordered_map<std::uint64_t, std::vector<std::pair<int, bool>>> movers;
  for (std::size_t t = 0; t + 1 < horizon; ++t) {
    movers.clear();
    for (int i = 0; i < n; ++i) {
      const Cell u = detail::padded_position(plan.paths[i], t);
      const Cell v = detail::padded_position(plan.paths[i], t + 1);
      if (u == v) continue;
      const bool forward = v < u;
      const Cell lo = forward ? v : u;
      const Cell hi = forward ? u : v;
      const std::uint64_t key =
          (static_cast<std::uint64_t>(static_cast<std::uint32_t>(lo.row)) << 48) ^
          (static_cast<std::uint64_t>(static_cast<std::uint32_t>(lo.col)) << 32) ^
          (static_cast<std::uint64_t>(static_cast<std::uint32_t>(hi.row)) << 16) ^
          static_cast<std::uint32_t>(hi.col);
      movers[key].push_back({i, forward});
    }
    for (const auto& [key, list] : movers) {
      for (std::size_t a = 0; a < list.size(); ++a)
        for (std::size_t b = a + 1; b < list.size(); ++b) {
          if (list[a].second == list[b].second) continue;  // same direction
          int i = list[a].first, j = list[b].first;
          if (i > j) std::swap(i, j);
          report.edge_conflicts.push_back(EdgeConflict{i, j, static_cast<int>(t)});
          pairs.insert(detail::pair_key(i, j));
        }
    }
  }
  report.colliding_pairs = static_cast<int>(pairs.size());
  std::sort(report.vertex_conflicts.begin(), report.vertex_conflicts.end(),
            [](const VertexConflict& a, const VertexConflict& b) {
              return std::tie(a.time, a.agent_a, a.agent_b) <
                     std::tie(b.time, b.agent_a, b.agent_b);
            });
  std::sort(report.edge_conflicts.begin(), report.edge_conflicts.end(),
            [](const EdgeConflict& a, const EdgeConflict& b) {
              return std::tie(a.time, a.agent_a, a.agent_b) <
                     std::tie(b.time, b.agent_a, b.agent_b);
            });
  return report;
}

inline ConflictReport detect_conflicts(const Plan& plan, int expected_agents) {
  if (plan.agent_count() != expected_agents)
    throw std::invalid_argument("detect_conflicts: plan has " +
                                std::to_string(plan.agent_count()) +
                                " agents, expected " +
                                std::to_string(expected_agents));
  return detect_conflicts(plan);
}

// Per-agent cost: the last timestep after which the agent rests at its goal
// forever. An agent that starts at its goal and never leaves costs 0.
inline long long sum_of_costs(const Plan& plan, const std::vector<Cell>& goals) {
  if (plan.paths.size() != goals.size())
    throw std::invalid_argument("sum_of_costs: agent count mismatch");
  long long total = 0;
  for (std::size_t i = 0; i < plan.paths.size(); ++i) {
    const Path& path = plan.paths[i];
    if (path.empty() || path.back() != goals[i])
      throw std::invalid_argument("sum_of_costs: path " + std::to_string(i) +
                                  " does not end at its goal");
    long long cost = 0;
    for (std::size_t t = 0; t < path.size(); ++t)
      if (path[t] != goals[i]) cost = static_cast<long long>(t) + 1;
    total += cost;
  }
  return total;
}

// Repeats each path's final cell until the path has at least `length`
// positions.
inline Plan pad_plan(const Plan& plan, std::size_t length) {
  Plan padded = plan;
  for (auto& path : padded.paths) {
    if (path.empty()) throw std::invalid_argument("pad_plan: empty path");
    while (path.size() < length) path.push_back(path.back());
  }
  return padded;
}

// Validity of a plan against an instance: starts, goals, step geometry and
// static obstacles. Conflicts are not part of this check.
inline bool plan_paths_valid(const Plan& plan, const Instance& instance,
                             std::string* reason = nullptr) {
  const auto fail = [&](const std::string& why) {
    if (reason) *reason = why;
    return false;
  };
  if (plan.agent_count() != instance.agent_count())
    return fail("agent count mismatch");
  for (int i = 0; i < plan.agent_count(); ++i) {
    const Path& path = plan.paths[i];
    if (path.empty()) return fail("agent " + std::to_string(i) + ": empty path");
    if (path.front() != instance.starts[i])
      return fail("agent " + std::to_string(i) + ": does not start at its start");
    if (path.back() != instance.goals[i])
      return fail("agent " + std::to_string(i) + ": does not end at its goal");
    for (std::size_t t = 0; t < path.size(); ++t) {
      if (!instance.map.free(path[t]))
        return fail("agent " + std::to_string(i) + ": cell off-grid or on obstacle at t=" +
                    std::to_string(t));
      if (t + 1 < path.size()) {
        const int dr = path[t + 1].row - path[t].row;
        const int dc = path[t + 1].col - path[t].col;
        if (std::abs(dr) + std::abs(dc) > 1)
          return fail("agent " + std::to_string(i) + ": invalid move at t=" +
                      std::to_string(t));
      }
    }
  }
  return true;
}

inline bool plan_feasible(const Plan& plan, const Instance& instance,
                          std::string* reason = nullptr) {
  if (!plan_paths_valid(plan, instance, reason)) return false;
  const auto report = detect_conflicts(plan);
  if (report.colliding_pairs != 0) {
    if (reason) *reason = "plan has " + std::to_string(report.colliding_pairs) +
                          " colliding pairs";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Text formats.
//
// Map: first line "H W", then H lines of W characters, '.' free, '@' obstacle.
// Scenario: one line per agent, "srow scol grow gcol", 0-indexed.
// Plan: one line per agent, "r0 c0 r1 c1 ...".
// ---------------------------------------------------------------------------

inline GridMap parse_map(std::istream& in) {
  int height = 0, width = 0;
  if (!(in >> height >> width) || height < 1 || width < 1)
    throw std::runtime_error("map: bad header, expected 'H W'");
  std::string line;
  std::getline(in, line);
  std::vector<std::uint8_t> cells;
  cells.reserve(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) {
    if (!std::getline(in, line))
      throw std::runtime_error("map: missing row " + std::to_string(r));
    if (static_cast<int>(line.size()) < width)
      throw std::runtime_error("map: row " + std::to_string(r) + " too short");
    for (int c = 0; c < width; ++c) {
      const char ch = line[c];
      if (ch == '.') cells.push_back(0);
      else if (ch == '@') cells.push_back(1);
      else throw std::runtime_error(std::string("map: bad character '") + ch +
                                    "' in row " + std::to_string(r));
    }
  }
  return GridMap(height, width, cells);
}

inline std::string format_map(const GridMap& map) {
  std::ostringstream out;
  out << map.height() << ' ' << map.width() << '\n';
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c)
      out << (map.obstacle(Cell{r, c}) ? '@' : '.');
    out << '\n';
  }
  return out.str();
}

struct ScenarioEntry {
  Cell start;
  Cell goal;
};

inline std::vector<ScenarioEntry> parse_scenario(std::istream& in) {
  std::vector<ScenarioEntry> entries;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    ScenarioEntry e;
    if (!(fields >> e.start.row >> e.start.col >> e.goal.row >> e.goal.col))
      throw std::runtime_error("scenario: bad line " + std::to_string(number));
    entries.push_back(e);
  }
  return entries;
}

inline std::string format_scenario(const std::vector<Cell>& starts,
                                   const std::vector<Cell>& goals) {
  std::ostringstream out;
  for (std::size_t i = 0; i < starts.size(); ++i)
    out << starts[i].row << ' ' << starts[i].col << ' ' << goals[i].row << ' '
        << goals[i].col << '\n';
  return out.str();
}

inline std::string format_plan(const Plan& plan) {
  std::ostringstream out;
  for (const auto& path : plan.paths) {
    for (std::size_t t = 0; t < path.size(); ++t) {
      if (t) out << ' ';
      out << path[t].row << ' ' << path[t].col;
    }
    out << '\n';
  }
  return out.str();
}

inline Plan parse_plan(std::istream& in) {
  Plan plan;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    Path path;
    int r = 0, c = 0;
    while (fields >> r >> c) path.push_back(Cell{r, c});
    if (path.empty() || !fields.eof())
      throw std::runtime_error("plan: bad line " + std::to_string(number));
    plan.paths.push_back(std::move(path));
  }
  return plan;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Structural invariants of an instance. Reachability is left to callers with
// access to a distance map; this checks what can be checked locally.
inline void validate_instance(const Instance& instance) {
  const int n = instance.agent_count();
  if (static_cast<int>(instance.goals.size()) != n)
    throw std::invalid_argument("instance: starts/goals size mismatch");
  if (instance.horizon < 1) throw std::invalid_argument("instance: horizon < 1");
  std::unordered_set<int> seen;
  for (const Cell s : instance.starts) {
    if (!instance.map.free(s)) throw std::invalid_argument("instance: start on obstacle");
    if (!seen.insert(instance.map.index(s)).second)
      throw std::invalid_argument("instance: duplicate start");
  }
  seen.clear();
  for (const Cell g : instance.goals) {
    if (!instance.map.free(g)) throw std::invalid_argument("instance: goal on obstacle");
    if (!seen.insert(instance.map.index(g)).second)
      throw std::invalid_argument("instance: duplicate goal");
  }
}

}  // namespace difflns
