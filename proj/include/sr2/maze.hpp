#pragma once

// Maze generation and path checking. A maze is a width x height bitmap whose
// cells are either open or wall; logical rooms sit at odd coordinates and the
// carving step knocks out the wall cell between two rooms, so a path through
// the bitmap alternates rooms and opened walls. Every generated maze is a
// spanning tree over its rooms: all open cells are mutually reachable and the
// shortest route between any two is unique.

#include <cstdint>
#include <utility>
#include <vector>

#include "sr2/errors.hpp"
#include "sr2/rng.hpp"

namespace sr2 {

struct MazeInstance {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> open;  // row-major, 1 = passable
  int start_r = 0, start_c = 0;
  int goal_r = 0, goal_c = 0;
  std::vector<std::pair<int, int>> path;  // shortest route, start..goal
  std::uint64_t id = 0;

  bool is_open(int r, int c) const {
    return open[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(c)] != 0;
  }
  // Number of cells on the shortest route (0 when unreachable).
  long path_length() const { return static_cast<long>(path.size()); }
};

// Randomised depth-first carving; start and goal are sampled as distinct
// rooms, the stored path is the breadth-first shortest route. Dimensions must
// be odd and at least 3. The instance id is the generation seed.
MazeInstance generate_maze(int width, int height, std::uint64_t seed);

// Breadth-first shortest route between the instance's endpoints with a fixed
// neighbour order; empty when the goal is unreachable.
std::vector<std::pair<int, int>> maze_shortest_path(const MazeInstance& m);

// Sorts by shortest-path length descending (ties broken by ascending id) and
// keeps the top `keep_fraction` of instances.
std::vector<MazeInstance> filter_hardest(std::vector<MazeInstance> instances,
                                         double keep_fraction);

// Token codec over the full bitmap, row-major. Inputs name the cell type,
// targets mark membership in the solution path.
inline constexpr int kMazeWall = 0;
inline constexpr int kMazeOpen = 1;
inline constexpr int kMazeStart = 2;
inline constexpr int kMazeGoal = 3;
inline constexpr int kMazeOffPath = 0;
inline constexpr int kMazeOnPath = 1;

std::vector<int> encode_maze_input(const MazeInstance& m);
std::vector<int> encode_maze_target(const MazeInstance& m);

// Rebuilds the geometry (walls, endpoints, shortest path) from input tokens;
// the inverse of encode_maze_input up to the instance id.
MazeInstance decode_maze_input(const std::vector<int>& tokens, int width);

// Judges a predicted on/off-path grid: `valid` means the marked cells form a
// simple wall-free path from start to goal; `optimal` additionally requires
// its length to match the breadth-first optimum.
struct MazePathCheck {
  bool valid = false;
  bool optimal = false;
};
MazePathCheck validate_maze_path(const MazeInstance& m,
                                 const std::vector<int>& on_path);

}  // namespace sr2
