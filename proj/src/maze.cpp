#include "sr2/maze.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

namespace sr2 {

namespace {

// Fixed scan order: up, down, left, right. Both the carver's candidate list
// and the breadth-first search use it, so results are reproducible.
constexpr std::array<std::pair<int, int>, 4> kSteps{
    {{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

std::size_t flat(const MazeInstance& m, int r, int c) {
  return static_cast<std::size_t>(r) * static_cast<std::size_t>(m.width) +
         static_cast<std::size_t>(c);
}

// Breadth-first distances (in steps) from (sr, sc) over open cells; -1 marks
// unreachable. Parents allow path reconstruction.
void bfs(const MazeInstance& m, int sr, int sc, std::vector<int>& dist,
         std::vector<int>& parent) {
  const std::size_t n =
      static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height);
  dist.assign(n, -1);
  parent.assign(n, -1);
  std::deque<std::pair<int, int>> queue;
  dist[flat(m, sr, sc)] = 0;
  queue.emplace_back(sr, sc);
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    const int d = dist[flat(m, r, c)];
    for (const auto& [dr, dc] : kSteps) {
      const int nr = r + dr;
      const int nc = c + dc;
      if (nr < 0 || nr >= m.height || nc < 0 || nc >= m.width) continue;
      if (!m.is_open(nr, nc)) continue;
      const std::size_t ni = flat(m, nr, nc);
      if (dist[ni] >= 0) continue;
      dist[ni] = d + 1;
      parent[ni] = static_cast<int>(flat(m, r, c));
      queue.emplace_back(nr, nc);
    }
  }
}

}  // namespace

MazeInstance generate_maze(int width, int height, std::uint64_t seed) {
  if (width < 3 || height < 3 || width % 2 == 0 || height % 2 == 0) {
    throw UsageError("generate_maze: dimensions must be odd and >= 3, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  MazeInstance m;
  m.width = width;
  m.height = height;
  m.id = seed;
  m.open.assign(
      static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);

  const int rooms_w = (width - 1) / 2;
  const int rooms_h = (height - 1) / 2;
  const int n_rooms = rooms_w * rooms_h;
  Rng rng = make_rng(seed);

  // Iterative randomised depth-first carving over the room lattice. Room
  // (i, j) sits at bitmap coordinate (2i+1, 2j+1).
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(n_rooms), 0);
  std::vector<int> stack;
  const int first = rand_int(rng, n_rooms);
  visited[static_cast<std::size_t>(first)] = 1;
  m.open[flat(m, (first / rooms_w) * 2 + 1, (first % rooms_w) * 2 + 1)] = 1;
  stack.push_back(first);
  while (!stack.empty()) {
    const int room = stack.back();
    const int ri = room / rooms_w;
    const int rj = room % rooms_w;
    int candidates[4];
    int n_cand = 0;
    for (const auto& [dr, dc] : kSteps) {
      const int ni = ri + dr;
      const int nj = rj + dc;
      if (ni < 0 || ni >= rooms_h || nj < 0 || nj >= rooms_w) continue;
      const int next = ni * rooms_w + nj;
      if (!visited[static_cast<std::size_t>(next)]) candidates[n_cand++] = next;
    }
    if (n_cand == 0) {
      stack.pop_back();
      continue;
    }
    const int next = candidates[rand_int(rng, n_cand)];
    visited[static_cast<std::size_t>(next)] = 1;
    const int nr = (next / rooms_w) * 2 + 1;
    const int nc = (next % rooms_w) * 2 + 1;
    m.open[flat(m, nr, nc)] = 1;
    // Knock out the wall between the two rooms.
    m.open[flat(m, (ri * 2 + 1 + nr) / 2, (rj * 2 + 1 + nc) / 2)] = 1;
    stack.push_back(next);
  }

  const int start_room = rand_int(rng, n_rooms);
  int goal_room = rand_int(rng, n_rooms - 1);
  if (goal_room >= start_room) ++goal_room;
  m.start_r = (start_room / rooms_w) * 2 + 1;
  m.start_c = (start_room % rooms_w) * 2 + 1;
  m.goal_r = (goal_room / rooms_w) * 2 + 1;
  m.goal_c = (goal_room % rooms_w) * 2 + 1;

  m.path = maze_shortest_path(m);
  return m;
}

std::vector<std::pair<int, int>> maze_shortest_path(const MazeInstance& m) {
  std::vector<int> dist, parent;
  bfs(m, m.start_r, m.start_c, dist, parent);
  const std::size_t goal = flat(m, m.goal_r, m.goal_c);
  if (dist[goal] < 0) return {};
  std::vector<std::pair<int, int>> path;
  for (int at = static_cast<int>(goal); at >= 0;
       at = parent[static_cast<std::size_t>(at)]) {
    path.emplace_back(at / m.width, at % m.width);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<MazeInstance> filter_hardest(std::vector<MazeInstance> instances,
                                         double keep_fraction) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw UsageError("filter_hardest: keep_fraction must be in [0, 1], got " +
                     std::to_string(keep_fraction));
  }
  std::stable_sort(instances.begin(), instances.end(),
                   [](const MazeInstance& a, const MazeInstance& b) {
                     if (a.path_length() != b.path_length()) {
                       return a.path_length() > b.path_length();
                     }
                     return a.id < b.id;
                   });
  const auto n_keep = static_cast<std::size_t>(std::min<long long>(
      static_cast<long long>(instances.size()),
      std::llround(keep_fraction * static_cast<double>(instances.size()))));
  instances.resize(n_keep);
  return instances;
}

std::vector<int> encode_maze_input(const MazeInstance& m) {
  std::vector<int> tokens(m.open.size(), kMazeWall);
  for (std::size_t i = 0; i < m.open.size(); ++i) {
    if (m.open[i]) tokens[i] = kMazeOpen;
  }
  tokens[flat(m, m.start_r, m.start_c)] = kMazeStart;
  tokens[flat(m, m.goal_r, m.goal_c)] = kMazeGoal;
  return tokens;
}

std::vector<int> encode_maze_target(const MazeInstance& m) {
  std::vector<int> tokens(m.open.size(), kMazeOffPath);
  for (const auto& [r, c] : m.path) {
    tokens[flat(m, r, c)] = kMazeOnPath;
  }
  return tokens;
}

MazeInstance decode_maze_input(const std::vector<int>& tokens, int width) {
  if (width <= 0 || tokens.empty() ||
      tokens.size() % static_cast<std::size_t>(width) != 0) {
    throw DimensionError("decode_maze_input: " + std::to_string(tokens.size()) +
                         " tokens do not tile width " + std::to_string(width));
  }
  MazeInstance m;
  m.width = width;
  m.height = static_cast<int>(tokens.size() / static_cast<std::size_t>(width));
  m.open.assign(tokens.size(), 0);
  int starts = 0;
  int goals = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < kMazeWall || t > kMazeGoal) {
      throw UsageError("decode_maze_input: token " + std::to_string(t) +
                       " outside the cell vocabulary");
    }
    if (t != kMazeWall) m.open[i] = 1;
    if (t == kMazeStart) {
      m.start_r = static_cast<int>(i) / width;
      m.start_c = static_cast<int>(i) % width;
      ++starts;
    } else if (t == kMazeGoal) {
      m.goal_r = static_cast<int>(i) / width;
      m.goal_c = static_cast<int>(i) % width;
      ++goals;
    }
  }
  if (starts != 1 || goals != 1) {
    throw UsageError("decode_maze_input: need exactly one start and one goal, got " +
                     std::to_string(starts) + " and " + std::to_string(goals));
  }
  m.path = maze_shortest_path(m);
  return m;
}

MazePathCheck validate_maze_path(const MazeInstance& m,
                                 const std::vector<int>& on_path) {
  MazePathCheck check;
  if (on_path.size() != m.open.size()) {
    throw DimensionError("validate_maze_path: prediction has " +
                         std::to_string(on_path.size()) + " cells, maze has " +
                         std::to_string(m.open.size()));
  }
  const auto on = [&](int r, int c) {
    return r >= 0 && r < m.height && c >= 0 && c < m.width &&
           on_path[flat(m, r, c)] != 0;
  };

  long n_on = 0;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (!on(r, c)) continue;
      ++n_on;
      if (!m.is_open(r, c)) return check;  // path through a wall
      int degree = 0;
      for (const auto& [dr, dc] : kSteps) degree += on(r + dr, c + dc) ? 1 : 0;
      const bool endpoint = (r == m.start_r && c == m.start_c) ||
                            (r == m.goal_r && c == m.goal_c);
      if (degree != (endpoint ? 1 : 2)) return check;
    }
  }
  if (!on(m.start_r, m.start_c) || !on(m.goal_r, m.goal_c)) return check;

  // Trace from the start: with the degree constraints satisfied, reaching the
  // goal after exactly n_on cells proves the marked set is one simple path.
  int prev = -1;
  int cur = static_cast<int>(flat(m, m.start_r, m.start_c));
  long steps = 1;
  while (cur != static_cast<int>(flat(m, m.goal_r, m.goal_c))) {
    const int r = cur / m.width;
    const int c = cur % m.width;
    int next = -1;
    for (const auto& [dr, dc] : kSteps) {
      if (!on(r + dr, c + dc)) continue;
      const int cand = static_cast<int>(flat(m, r + dr, c + dc));
      if (cand != prev) {
        next = cand;
        break;
      }
    }
    if (next < 0) return check;  // dead end before the goal
    prev = cur;
    cur = next;
    ++steps;
    if (steps > n_on) return check;  // safety: cycle would loop forever
  }
  if (steps != n_on) return check;  // marked cells off the traced walk

  check.valid = true;
  std::vector<int> dist, parent;
  bfs(m, m.start_r, m.start_c, dist, parent);
  const int optimum = dist[flat(m, m.goal_r, m.goal_c)];
  check.optimal = optimum >= 0 && n_on == static_cast<long>(optimum) + 1;
  return check;
}

}  // namespace sr2
