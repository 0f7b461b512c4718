#pragma once

// Single-agent planning: BFS distance fields, safe-interval tables over other
// agents' paths, and SIPPS — a safe-interval search that minimizes
// (soft collisions, arrival time) lexicographically. All dynamic occupancy is
// soft; only static obstacles are hard constraints.

#include <chrono>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "difflns/grid.hpp"

namespace difflns {

struct DistanceField {
  static constexpr int kUnreachable = -1;

  int height = 0;
  int width = 0;
  std::vector<int> distance;  // steps to the goal, kUnreachable if cut off

  int at(Cell c) const { return distance[c.row * width + c.col]; }
  bool reachable(Cell c) const { return at(c) != kUnreachable; }
};

inline DistanceField bfs_distance_map(const GridMap& map, Cell goal) {
  if (!map.free(goal))
    throw std::invalid_argument("bfs_distance_map: goal not traversable");
  DistanceField field;
  field.height = map.height();
  field.width = map.width();
  field.distance.assign(map.cell_count(), DistanceField::kUnreachable);
  std::vector<int> frontier{map.index(goal)};
  field.distance[map.index(goal)] = 0;
  std::vector<int> next;
  int depth = 0;
  while (!frontier.empty()) {
    ++depth;
    next.clear();
    for (const int idx : frontier) {
      const Cell c = map.cell_at(idx);
      for (int a = 1; a < kNumActions; ++a) {
        const Cell nb = displaced(c, static_cast<Action>(a));
        if (!map.free(nb)) continue;
        const int ni = map.index(nb);
        if (field.distance[ni] != DistanceField::kUnreachable) continue;
        field.distance[ni] = depth;
        next.push_back(ni);
      }
    }
    frontier.swap(next);
  }
  return field;
}

inline std::vector<DistanceField> goal_distance_fields(const Instance& instance) {
  std::vector<DistanceField> fields;
  fields.reserve(instance.agent_count());
  for (const Cell goal : instance.goals)
    fields.push_back(bfs_distance_map(instance.map, goal));
  return fields;
}

// Shortest static path from `from` to `goal`, excluding `from` itself.
// `from == goal` gives an empty suffix.
inline Path shortest_suffix(const GridMap& map, Cell from, Cell goal) {
  if (!map.free(from))
    throw std::invalid_argument("shortest_suffix: source not traversable");
  const DistanceField field = bfs_distance_map(map, goal);
  if (!field.reachable(from))
    throw std::runtime_error("shortest_suffix: goal unreachable");
  Path suffix;
  Cell cur = from;
  while (cur != goal) {
    const int d = field.at(cur);
    for (int a = 1; a < kNumActions; ++a) {
      const Cell nb = displaced(cur, static_cast<Action>(a));
      if (map.free(nb) && field.at(nb) == d - 1) {
        cur = nb;
        break;
      }
    }
    suffix.push_back(cur);
  }
  return suffix;
}

// ---------------------------------------------------------------------------
// SafeIntervalTable
//
// Built from a set of fixed paths. Each path occupies its cells at its visit
// times and rests at its final cell forever. Per cell the timeline decomposes
// into disjoint sorted intervals of constant occupancy count covering
// [0, infinity); occupancy > 0 marks a soft-occupied interval.
// ---------------------------------------------------------------------------

class SafeIntervalTable {
 public:
  static constexpr int kInfinity = std::numeric_limits<int>::max() / 4;

  struct Interval {
    int start = 0;   // inclusive
    int end = 0;     // exclusive; kInfinity on the last interval
    int occupancy = 0;

    bool soft_occupied() const { return occupancy > 0; }
  };

  explicit SafeIntervalTable(const GridMap& map)
      : map_(&map), cells_(map.cell_count()) {}

  void add_path(const Path& path) {
    if (path.empty())
      throw std::invalid_argument("SafeIntervalTable: empty path");
    const int path_id = num_paths_++;
    const int last = static_cast<int>(path.size()) - 1;
    for (int t = 0; t < last; ++t) {
      CellData& cd = cells_[map_->index(path[t])];
      cd.visits.push_back(t);
      cd.visit_records.push_back({path_id, t});
      cd.dirty = true;
      if (path[t] != path[t + 1])
        edge_times_[edge_key(path[t], path[t + 1])].push_back(t);
    }
    CellData& gd = cells_[map_->index(path[last])];
    gd.park_starts.push_back(last);
    gd.parked_paths.push_back(path_id);
    gd.dirty = true;
    latest_event_ = std::max(latest_event_, last);
  }

  int path_count() const { return num_paths_; }
  int latest_event() const { return latest_event_; }
  const GridMap& map() const { return *map_; }

  const std::vector<Interval>& intervals(Cell c) const {
    CellData& cd = cells_[map_->index(c)];
    if (cd.dirty || cd.intervals.empty()) rebuild(cd);
    return cd.intervals;
  }

  int interval_index(Cell c, int t) const {
    const auto& list = intervals(c);
    // Intervals are sorted and cover [0, kInfinity); binary search by start.
    int lo = 0, hi = static_cast<int>(list.size()) - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (list[mid].start <= t) lo = mid; else hi = mid - 1;
    }
    return lo;
  }

  int occupancy_at(Cell c, int t) const {
    return intervals(c)[interval_index(c, t)].occupancy;
  }

  // Number of fixed paths traversing `from` -> `to` departing at time t.
  int traversal_count(Cell from, Cell to, int t) const {
    const auto it = edge_times_.find(edge_key(from, to));
    if (it == edge_times_.end()) return 0;
    const auto& times = sorted(it->second);
    const auto range = std::equal_range(times.begin(), times.end(), t);
    return static_cast<int>(range.second - range.first);
  }

  const std::vector<int>& traversal_times(Cell from, Cell to) const {
    static const std::vector<int> kEmpty;
    const auto it = edge_times_.find(edge_key(from, to));
    if (it == edge_times_.end()) return kEmpty;
    return sorted(it->second);
  }

  // For each fixed path that ever occupies `c`: the last time it does so,
  // with kInfinity for paths resting at `c`. Sorted ascending.
  std::vector<int> last_visit_times(Cell c) const {
    const CellData& cd = cells_[map_->index(c)];
    std::unordered_map<int, int> last;
    for (const auto& [path_id, t] : cd.visit_records) {
      auto [it, inserted] = last.insert({path_id, t});
      if (!inserted && it->second < t) it->second = t;
    }
    for (const int path_id : cd.parked_paths) last[path_id] = kInfinity;
    std::vector<int> times;
    times.reserve(last.size());
    for (const auto& [path_id, t] : last) times.push_back(t);
    std::sort(times.begin(), times.end());
    return times;
  }

 private:
  struct CellData {
    std::vector<int> visits;                        // transient visit times
    std::vector<std::pair<int, int>> visit_records; // (path id, time)
    std::vector<int> park_starts;                   // rest-forever starts
    std::vector<int> parked_paths;
    std::vector<Interval> intervals;
    bool dirty = true;
  };

  static std::uint64_t edge_key(Cell from, Cell to) {
    return (static_cast<std::uint64_t>(static_cast<std::uint16_t>(from.row)) << 48) |
           (static_cast<std::uint64_t>(static_cast<std::uint16_t>(from.col)) << 32) |
           (static_cast<std::uint64_t>(static_cast<std::uint16_t>(to.row)) << 16) |
           static_cast<std::uint16_t>(to.col);
  }

  static const std::vector<int>& sorted(std::vector<int>& v) {
    if (!std::is_sorted(v.begin(), v.end())) std::sort(v.begin(), v.end());
    return v;
  }

  void rebuild(CellData& cd) const {
    // Sweep +1/-1 deltas: a visit at t occupies [t, t+1); a park occupies
    // [start, infinity).
    std::unordered_map<int, int> delta;
    for (const int t : cd.visits) {
      delta[t] += 1;
      delta[t + 1] -= 1;
    }
    for (const int s : cd.park_starts) delta[s] += 1;
    std::vector<std::pair<int, int>> points(delta.begin(), delta.end());
    std::sort(points.begin(), points.end());
    cd.intervals.clear();
    int current = 0;
    int start = 0;
    for (const auto& [t, d] : points) {
      if (d == 0) continue;
      if (t > start) cd.intervals.push_back({start, t, current});
      else if (t < start) throw std::logic_error("SafeIntervalTable: negative time");
      current += d;
      start = t;
    }
    cd.intervals.push_back({start, kInfinity, current});
    // Merge adjacent intervals with equal occupancy.
    std::vector<Interval> merged;
    for (const auto& iv : cd.intervals) {
      if (!merged.empty() && merged.back().occupancy == iv.occupancy)
        merged.back().end = iv.end;
      else
        merged.push_back(iv);
    }
    cd.intervals = std::move(merged);
    cd.dirty = false;
  }

  const GridMap* map_;
  mutable std::vector<CellData> cells_;
  mutable std::unordered_map<std::uint64_t, std::vector<int>> edge_times_;
  int num_paths_ = 0;
  int latest_event_ = 0;
};

// ---------------------------------------------------------------------------
// SIPPS
// ---------------------------------------------------------------------------

struct SippsOptions {
  int max_time = 1 << 20;  // latest admissible arrival time
  double deadline_seconds = std::numeric_limits<double>::infinity();
};

struct PathResult {
  bool found = false;
  Path path;
  int soft_collisions = 0;
};

namespace detail {

// Soft-collision accounting, shared between SIPPS and the repair loop:
//   - one event per timestep at which the path shares a cell with a fixed
//     path (including while waiting),
//   - one event per swap of an edge with a fixed path,
//   - after arrival, one residual collision per fixed path that still visits
//     the goal cell at a later time (counted once per pair).
inline int residual_goal_collisions(const std::vector<int>& last_visits,
                                    int arrival) {
  const auto it =
      std::upper_bound(last_visits.begin(), last_visits.end(), arrival);
  return static_cast<int>(last_visits.end() - it);
}

}  // namespace detail

// Safe-interval search over states (cell, interval) with labels
// (soft collisions, arrival time) ordered lexicographically. Within an
// interval the occupancy count is constant, so waiting costs are linear and
// only a bounded candidate set of departure times needs expansion.
inline PathResult sipps(const GridMap& map, Cell start, Cell goal,
                        const SafeIntervalTable& others,
                        const SippsOptions& options = {}) {
  if (!map.free(start) || !map.free(goal))
    throw std::invalid_argument("sipps: endpoints must be traversable");

  struct Label {
    int cell = 0;      // map index
    int interval = 0;  // index into others.intervals(cell)
    int time = 0;      // arrival time at this state
    int cost = 0;      // soft collisions accumulated so far
    int parent = -1;
  };
  struct QueueEntry {
    int cost;
    int time;
    std::uint32_t sequence;
    int label;
    int completion_time;  // -1 for transit entries

    bool operator>(const QueueEntry& other) const {
      if (cost != other.cost) return cost > other.cost;
      if (time != other.time) return time > other.time;
      return sequence > other.sequence;
    }
  };

  const auto start_clock = std::chrono::steady_clock::now();
  const auto out_of_time = [&]() {
    if (options.deadline_seconds ==
        std::numeric_limits<double>::infinity())
      return false;
    const std::chrono::duration<double> used =
        std::chrono::steady_clock::now() - start_clock;
    return used.count() >= options.deadline_seconds;
  };

  std::vector<Label> arena;
  std::vector<bool> alive;
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue;
  std::uint32_t sequence = 0;

  // Pareto frontier of (cost, time) labels per (cell, interval).
  std::unordered_map<std::uint64_t, std::vector<int>> frontier;
  const auto state_key = [](int cell, int interval) {
    return (static_cast<std::uint64_t>(cell) << 20) |
           static_cast<std::uint32_t>(interval);
  };

  const int goal_index = map.index(goal);
  const std::vector<int> goal_last_visits = others.last_visit_times(goal);

  const auto push_completions = [&](int label_idx) {
    const Label& label = arena[label_idx];
    const auto& iv = others.intervals(map.cell_at(label.cell))[label.interval];
    // Candidate completion times: immediately, and just past each residual
    // breakpoint reachable by waiting inside the current interval.
    const auto push_at = [&](int when) {
      if (when < label.time || when > options.max_time || when >= iv.end)
        return;
      const int waiting = iv.occupancy * (when - label.time);
      const int total = label.cost + waiting +
                        detail::residual_goal_collisions(goal_last_visits, when);
      queue.push({total, when, sequence++, label_idx, when});
    };
    push_at(label.time);
    for (const int lv : goal_last_visits) {
      if (lv >= iv.end || lv == SafeIntervalTable::kInfinity) continue;
      push_at(lv);
      push_at(lv + 1);
    }
  };

  // Dominance within a (cell, interval) state. Future cost of a label from
  // departure time tau is cost + occupancy*(tau - time) + ..., so labels
  // compare on the waiting-adjusted value cost - occupancy*time together with
  // arrival time; in a free interval this reduces to plain (cost, time).
  const auto insert_label = [&](int cell, int interval, int time, int cost,
                                int parent) {
    const std::uint64_t key = state_key(cell, interval);
    const long long occupancy =
        others.intervals(map.cell_at(cell))[interval].occupancy;
    const long long adjusted = cost - occupancy * time;
    auto& labels = frontier[key];
    for (const int idx : labels) {
      if (!alive[idx]) continue;
      const long long existing =
          arena[idx].cost - occupancy * arena[idx].time;
      if (existing <= adjusted && arena[idx].time <= time) return;  // dominated
    }
    labels.erase(std::remove_if(labels.begin(), labels.end(),
                                [&](int idx) {
                                  if (!alive[idx]) return true;
                                  const long long existing =
                                      arena[idx].cost -
                                      occupancy * arena[idx].time;
                                  const bool dominated =
                                      adjusted <= existing &&
                                      time <= arena[idx].time;
                                  if (dominated) alive[idx] = false;
                                  return dominated;
                                }),
                 labels.end());
    const int idx = static_cast<int>(arena.size());
    arena.push_back({cell, interval, time, cost, parent});
    alive.push_back(true);
    labels.push_back(idx);
    queue.push({cost, time, sequence++, idx, -1});
    if (cell == goal_index) push_completions(idx);
  };

  {
    const int start_interval = others.interval_index(start, 0);
    const int start_cost = others.occupancy_at(start, 0);
    insert_label(map.index(start), start_interval, 0, start_cost, -1);
  }

  const auto reconstruct = [&](int label_idx, int completion_time) {
    std::vector<int> chain;
    for (int idx = label_idx; idx >= 0; idx = arena[idx].parent)
      chain.push_back(idx);
    std::reverse(chain.begin(), chain.end());
    Path path;
    path.push_back(map.cell_at(arena[chain.front()].cell));
    for (std::size_t i = 1; i < chain.size(); ++i) {
      const Label& prev = arena[chain[i - 1]];
      const Label& cur = arena[chain[i]];
      const Cell prev_cell = map.cell_at(prev.cell);
      const Cell cur_cell = map.cell_at(cur.cell);
      if (prev.cell == cur.cell) {
        for (int t = prev.time + 1; t <= cur.time; ++t) path.push_back(prev_cell);
      } else {
        for (int t = prev.time + 1; t < cur.time; ++t) path.push_back(prev_cell);
        path.push_back(cur_cell);
      }
    }
    const Label& last = arena[label_idx];
    for (int t = last.time + 1; t <= completion_time; ++t)
      path.push_back(map.cell_at(last.cell));
    return path;
  };

  int checked = 0;
  while (!queue.empty()) {
    if (((++checked) & 1023) == 0 && out_of_time()) return {};
    const QueueEntry entry = queue.top();
    queue.pop();
    if (entry.completion_time >= 0) {
      PathResult result;
      result.found = true;
      result.path = reconstruct(entry.label, entry.completion_time);
      result.soft_collisions = entry.cost;
      return result;
    }
    if (!alive[entry.label]) continue;
    const Label label = arena[entry.label];
    if (entry.cost != label.cost || entry.time != label.time) continue;  // stale
    const Cell cell = map.cell_at(label.cell);
    const auto& cell_intervals = others.intervals(cell);
    const auto& iv = cell_intervals[label.interval];

    // Wait across the end of the current interval.
    if (iv.end <= options.max_time &&
        label.interval + 1 < static_cast<int>(cell_intervals.size())) {
      const int waiting = iv.occupancy * (iv.end - 1 - label.time);
      const int arrival_cost =
          cell_intervals[label.interval + 1].occupancy;
      insert_label(label.cell, label.interval + 1, iv.end,
                   label.cost + waiting + arrival_cost, entry.label);
    }

    // Moves to the four neighbors, departing within the current interval.
    const int window_hi = std::min(iv.end - 1, options.max_time - 1);
    for (int a = 1; a < kNumActions; ++a) {
      const Cell target = displaced(cell, static_cast<Action>(a));
      if (!map.free(target)) continue;
      std::vector<int> candidates{label.time};
      const auto& target_intervals = others.intervals(target);
      for (const auto& tj : target_intervals) {
        const int departure = tj.start - 1;
        if (departure > window_hi) break;
        if (departure > label.time) candidates.push_back(departure);
      }
      // Departures that dodge swaps with fixed paths traversing target->cell.
      for (const int s : others.traversal_times(target, cell)) {
        if (s > window_hi) break;
        if (s + 1 >= label.time && s + 1 <= window_hi)
          candidates.push_back(s + 1);
      }
      if (map.index(target) == goal_index) {
        for (const int lv : goal_last_visits) {
          if (lv == SafeIntervalTable::kInfinity) continue;
          for (const int departure : {lv - 1, lv}) {
            if (departure >= label.time && departure <= window_hi)
              candidates.push_back(departure);
          }
        }
      }
      std::sort(candidates.begin(), candidates.end());
      candidates.erase(std::unique(candidates.begin(), candidates.end()),
                       candidates.end());
      for (const int departure : candidates) {
        if (departure < label.time || departure > window_hi) continue;
        const int arrival = departure + 1;
        const int target_iv = others.interval_index(target, arrival);
        const int cost = label.cost + iv.occupancy * (departure - label.time) +
                         target_intervals[target_iv].occupancy +
                         others.traversal_count(target, cell, departure);
        insert_label(map.index(target), target_iv, arrival, cost, entry.label);
      }
    }
  }
  return {};
}

}  // namespace difflns
