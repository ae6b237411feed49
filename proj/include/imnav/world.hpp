#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "imnav/records.hpp"
#include "imnav/rng.hpp"

namespace imnav::world {

struct LandmarkClass {
    int id = 0;
    std::string phrase;
    std::vector<float> prototype;  // unit norm, length d_v
    bool held_out = false;
};

struct LandmarkLibrary {
    int d_v = 0;
    std::vector<LandmarkClass> classes;
    std::vector<float> background;  // unit norm, shown on views without a landmark

    const LandmarkClass& at(int id) const;
    int size() const { return static_cast<int>(classes.size()); }
    // Class whose prototype has the highest cosine with feature; lowest id on ties.
    int nearest(const float* feature) const;
};

struct LibraryConfig {
    int d_v = 16;
    double held_out_fraction = 0.2;
    double max_abs_cos = 0.7;  // rejection threshold between any two prototypes
};

std::vector<std::string> load_phrases(const std::string& path);
LandmarkLibrary generate_library(const std::vector<std::string>& phrases, const LibraryConfig& cfg,
                                 std::uint64_t seed);

enum class Split { train, val_seen, val_unseen };
const char* split_name(Split s);
Split parse_split(const std::string& s);

enum class Topology { grid, ring };

struct WorldConfig {
    int nodes = 16;
    Topology topology = Topology::grid;
    double spacing = 1.5;
    double jitter = 0.2;
    double extra_edge_prob = 0.35;
    int max_degree = 4;
    int K = 12;
    double sigma_obs = 0.05;
    double landmark_density = 1.0;  // fraction of navigable views carrying a landmark
};

struct Node {
    int id = 0;
    double x = 0.0;
    double y = 0.0;
};

struct NavView {
    int view = 0;
    int neighbor = 0;
    bool operator==(const NavView&) const = default;
};

struct Placement {
    int class_id = 0;
    int view = 0;
    bool operator==(const Placement&) const = default;
};

struct World {
    int id = 0;
    Split split = Split::train;
    int K = 12;
    int d_v = 0;
    double sigma_obs = 0.0;
    std::vector<Node> nodes;
    std::vector<std::vector<NavView>> nav;            // per node, sorted by view
    std::vector<std::vector<Placement>> placements;   // per node, sorted by view
    std::vector<std::vector<float>> clean;            // per node, K*d_v noiseless features
    std::vector<std::vector<float>> panoramas;        // per node, K*d_v stored rendering

    int size() const { return static_cast<int>(nodes.size()); }
    double distance(int a, int b) const;
    int view_to(int from, int to) const;  // -1 if not adjacent
    int placement_at(int node, int view) const;  // class id or -1
};

// Panorama of K views, row-major K x d_v.
struct Panorama {
    int K = 0;
    int d_v = 0;
    std::vector<float> features;
    const float* view(int v) const { return features.data() + static_cast<std::size_t>(v) * d_v; }
};

World generate_world(const WorldConfig& cfg, const LandmarkLibrary& lib, Split split, std::uint64_t seed);

// Hand-built worlds (tests): nodes and undirected edges; views are assigned by
// heading and features are background only.
World build_world(const std::vector<Node>& nodes, const std::vector<std::pair<int, int>>& edges, int K,
                  const LandmarkLibrary& lib);

// Places class_id on the view from node toward neighbor and refreshes the clean features.
void place_landmark(World& w, const LandmarkLibrary& lib, int node, int view, int class_id);

const std::vector<NavView>& navigable(const World& w, int node);
Panorama observation_at(const World& w, int node, Rng& rng);

struct Path {
    std::vector<int> nodes;
    double length = 0.0;
};
Path shortest_path(const World& w, int a, int b);

enum class Mode { fine, coarse };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct Episode {
    int id = 0;
    int world_id = 0;
    int start = 0;
    int goal = 0;
    std::vector<int> teacher_path;
    Mode mode = Mode::fine;
    int target_landmark = -1;  // coarse mode only
    int start_heading = 0;
    int edges() const { return static_cast<int>(teacher_path.size()) - 1; }
};

inline constexpr int kMinPathEdges = 3;
inline constexpr int kMaxPathEdges = 7;

// Ordered (start, goal) pairs whose teacher path has 3..7 edges; coarse mode
// additionally requires a landmark placed at the goal.
std::vector<std::pair<int, int>> episode_pairs(const World& w, Mode mode);
Episode sample_episode(const World& w, Mode mode, std::uint64_t seed);
Episode sample_episode(const World& w, Mode mode, std::uint64_t seed, const std::vector<std::pair<int, int>>& pairs);

// Versioned line-record format shared by world and episode files.
void write_library(std::ostream& os, const LandmarkLibrary& lib);
void write_world(std::ostream& os, const World& w);
void write_episode(std::ostream& os, const Episode& e);
Episode parse_episode(const records::Line& l);

struct WorldFile {
    LandmarkLibrary library;
    std::vector<World> worlds;
    std::vector<Episode> episodes;
};
void write_world_file(std::ostream& os, const WorldFile& f);
WorldFile read_world_file(std::istream& is);

}  // namespace imnav::world
