#include "imnav/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <queue>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::world {

namespace {

double dot(const float* a, const float* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

std::vector<float> random_unit(int d, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = nd(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    std::vector<float> out(d);
    for (int i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

void check_node(const World& w, int node) {
    if (node < 0 || node >= w.size()) throw LookupError("unknown node " + std::to_string(node));
}

// Assigns one heading bin per incident edge; a taken bin moves to the nearest free one.
void assign_views(World& w, const std::vector<std::pair<int, int>>& edges) {
    const int n = w.size();
    std::vector<std::vector<int>> adj(n);
    for (auto [u, v] : edges) {
        adj[u].push_back(v);
        adj[v].push_back(u);
    }
    w.nav.assign(n, {});
    const double bin = 2.0 * std::numbers::pi / w.K;
    for (int u = 0; u < n; ++u) {
        std::sort(adj[u].begin(), adj[u].end());
        if (static_cast<int>(adj[u].size()) + 1 > w.K)
            throw ConfigError("node " + std::to_string(u) + " has degree " + std::to_string(adj[u].size()) +
                              " but K=" + std::to_string(w.K));
        std::vector<bool> used(w.K, false);
        for (int v : adj[u]) {
            const double ang = std::atan2(w.nodes[v].y - w.nodes[u].y, w.nodes[v].x - w.nodes[u].x);
            int b = static_cast<int>(std::lround(ang / bin));
            b = ((b % w.K) + w.K) % w.K;
            int chosen = -1;
            for (int off = 0; off < w.K && chosen < 0; ++off) {
                for (int sgn : {1, -1}) {
                    const int c = (((b + sgn * off) % w.K) + w.K) % w.K;
                    if (!used[c]) {
                        chosen = c;
                        break;
                    }
                }
            }
            used[chosen] = true;
            w.nav[u].push_back({chosen, v});
        }
        std::sort(w.nav[u].begin(), w.nav[u].end(), [](const NavView& a, const NavView& b) { return a.view < b.view; });
    }
}

void refresh_clean(World& w, const LandmarkLibrary& lib) {
    const int n = w.size();
    w.clean.assign(n, std::vector<float>(static_cast<std::size_t>(w.K) * w.d_v));
    for (int u = 0; u < n; ++u) {
        for (int v = 0; v < w.K; ++v)
            std::copy(lib.background.begin(), lib.background.end(), w.clean[u].begin() + static_cast<long>(v) * w.d_v);
        for (const auto& p : w.placements[u]) {
            const auto& proto = lib.at(p.class_id).prototype;
            std::copy(proto.begin(), proto.end(), w.clean[u].begin() + static_cast<long>(p.view) * w.d_v);
        }
    }
}

void render(World& w, Rng& rng) {
    w.panoramas = w.clean;
    for (auto& p : w.panoramas) add_gaussian_noise(p, w.sigma_obs, rng);
}

struct DisjointSets {
    std::vector<int> parent;
    explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[a] = b;
        return true;
    }
};

std::vector<std::pair<int, int>> grid_edges(const WorldConfig& cfg, int cols, Rng& rng) {
    const int n = cfg.nodes;
    auto id = [cols](int r, int c) { return r * cols + c; };
    std::vector<std::pair<int, int>> cand;
    for (int u = 0; u < n; ++u) {
        const int r = u / cols, c = u % cols;
        for (auto [dr, dc] : {std::pair{0, 1}, std::pair{1, 0}, std::pair{1, 1}, std::pair{1, -1}}) {
            const int rr = r + dr, cc = c + dc;
            if (cc < 0 || cc >= cols) continue;
            const int v = id(rr, cc);
            if (v >= n) continue;
            cand.emplace_back(u, v);
        }
    }
    auto crosses = [cols](std::pair<int, int> e, const std::vector<std::pair<int, int>>& chosen) {
        // Two diagonals of the same grid cell.
        const int r0 = e.first / cols, c0 = e.first % cols, r1 = e.second / cols, c1 = e.second % cols;
        if (r1 - r0 != 1 || std::abs(c1 - c0) != 1) return false;
        const int a = r0 * cols + c1, b = r1 * cols + c0;
        for (auto f : chosen)
            if ((f.first == std::min(a, b) && f.second == std::max(a, b))) return true;
        return false;
    };
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<std::pair<int, int>> order = cand;
        std::shuffle(order.begin(), order.end(), rng);
        DisjointSets ds(n);
        std::vector<int> deg(n, 0);
        std::vector<std::pair<int, int>> chosen;
        std::vector<std::pair<int, int>> rest;
        for (auto e : order) {
            if (deg[e.first] < cfg.max_degree && deg[e.second] < cfg.max_degree && !crosses(e, chosen) &&
                ds.find(e.first) != ds.find(e.second)) {
                ds.unite(e.first, e.second);
                ++deg[e.first];
                ++deg[e.second];
                chosen.push_back(e);
            } else {
                rest.push_back(e);
            }
        }
        if (static_cast<int>(chosen.size()) != n - 1) continue;
        for (auto e : rest) {
            if (uniform01(rng) >= cfg.extra_edge_prob) continue;
            if (deg[e.first] >= cfg.max_degree || deg[e.second] >= cfg.max_degree || crosses(e, chosen)) continue;
            ++deg[e.first];
            ++deg[e.second];
            chosen.push_back(e);
        }
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }
    throw ConfigError("could not build a connected graph under max_degree=" + std::to_string(cfg.max_degree));
}

}  // namespace

const LandmarkClass& LandmarkLibrary::at(int id) const {
    if (id < 0 || id >= size()) throw LookupError("unknown landmark class " + std::to_string(id));
    return classes[static_cast<std::size_t>(id)];
}

int LandmarkLibrary::nearest(const float* feature) const {
    int best = -1;
    double best_cos = -std::numeric_limits<double>::infinity();
    const double fn = std::sqrt(dot(feature, feature, d_v));
    for (const auto& c : classes) {
        const double cs = dot(feature, c.prototype.data(), d_v) / (fn > 0 ? fn : 1.0);
        if (cs > best_cos) {
            best_cos = cs;
            best = c.id;
        }
    }
    return best;
}

std::vector<std::string> load_phrases(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        line = records::trim(line);
        if (line.empty() || line[0] == '#') continue;
        out.push_back(line);
    }
    return out;
}

LandmarkLibrary generate_library(const std::vector<std::string>& phrases, const LibraryConfig& cfg,
                                 std::uint64_t seed) {
    if (phrases.empty()) throw ConfigError("landmark library is empty");
    if (cfg.d_v < 8) throw ConfigError("d_v must be at least 8");
    for (std::size_t i = 0; i < phrases.size(); ++i)
        for (std::size_t j = i + 1; j < phrases.size(); ++j)
            if (phrases[i] == phrases[j]) throw ConfigError("duplicate landmark phrase '" + phrases[i] + "'");
    Rng rng = make_rng(seed, 0x11b);
    LandmarkLibrary lib;
    lib.d_v = cfg.d_v;
    std::vector<std::vector<float>> accepted;
    const int need = static_cast<int>(phrases.size()) + 1;  // +1 for the background
    for (int tries = 0; static_cast<int>(accepted.size()) < need; ++tries) {
        if (tries > need * 10000) throw ConfigError("cannot separate prototypes at max_abs_cos=" +
                                                    records::format_float(cfg.max_abs_cos));
        auto v = random_unit(cfg.d_v, rng);
        bool ok = true;
        for (const auto& a : accepted)
            if (std::abs(dot(a.data(), v.data(), cfg.d_v)) > cfg.max_abs_cos) {
                ok = false;
                break;
            }
        if (ok) accepted.push_back(std::move(v));
    }
    lib.background = accepted.back();
    const int n = static_cast<int>(phrases.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int held = static_cast<int>(std::lround(cfg.held_out_fraction * n));
    std::vector<bool> held_out(n, false);
    for (int i = 0; i < held; ++i) held_out[order[i]] = true;
    for (int i = 0; i < n; ++i) lib.classes.push_back({i, phrases[i], accepted[i], held_out[i]});
    return lib;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val_seen: return "val_seen";
        case Split::val_unseen: return "val_unseen";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val_seen") return Split::val_seen;
    if (s == "val_unseen") return Split::val_unseen;
    throw ConfigError("unknown split '" + s + "'");
}

const char* mode_name(Mode m) { return m == Mode::fine ? "fine" : "coarse"; }

Mode parse_mode(const std::string& s) {
    if (s == "fine") return Mode::fine;
    if (s == "coarse") return Mode::coarse;
    throw ConfigError("unknown mode '" + s + "'");
}

double World::distance(int a, int b) const {
    return std::hypot(nodes[a].x - nodes[b].x, nodes[a].y - nodes[b].y);
}

int World::view_to(int from, int to) const {
    for (const auto& nv : nav[from])
        if (nv.neighbor == to) return nv.view;
    return -1;
}

int World::placement_at(int node, int view) const {
    for (const auto& p : placements[node])
        if (p.view == view) return p.class_id;
    return -1;
}

World generate_world(const WorldConfig& cfg, const LandmarkLibrary& lib, Split split, std::uint64_t seed) {
    if (cfg.nodes < 8) throw ConfigError("world needs at least 8 nodes");
    if (lib.classes.empty()) throw ConfigError("landmark library is empty");
    if (lib.d_v < 8) throw ConfigError("d_v must be at least 8");
    if (cfg.K < cfg.max_degree + 1)
        throw ConfigError("K=" + std::to_string(cfg.K) + " is below max degree + 1 = " + std::to_string(cfg.max_degree + 1));
    if (cfg.topology == Topology::ring && cfg.max_degree < 2) throw ConfigError("ring topology needs max_degree >= 2");
    Rng rng = make_rng(seed, 0x3d);
    World w;
    w.split = split;
    w.K = cfg.K;
    w.d_v = lib.d_v;
    w.sigma_obs = cfg.sigma_obs;
    std::vector<std::pair<int, int>> edges;
    if (cfg.topology == Topology::ring) {
        const double r = cfg.spacing / (2.0 * std::sin(std::numbers::pi / cfg.nodes));
        for (int i = 0; i < cfg.nodes; ++i) {
            const double a = 2.0 * std::numbers::pi * i / cfg.nodes;
            w.nodes.push_back({i, r * std::cos(a), r * std::sin(a)});
            edges.emplace_back(std::min(i, (i + 1) % cfg.nodes), std::max(i, (i + 1) % cfg.nodes));
        }
        std::sort(edges.begin(), edges.end());
    } else {
        const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.nodes))));
        std::uniform_real_distribution<double> jit(-cfg.jitter, cfg.jitter);
        for (int i = 0; i < cfg.nodes; ++i) {
            const double x = (i % cols) * cfg.spacing + jit(rng);
            const double y = (i / cols) * cfg.spacing + jit(rng);
            w.nodes.push_back({i, x, y});
        }
        edges = grid_edges(cfg, cols, rng);
    }
    assign_views(w, edges);

    std::vector<int> pool;
    for (const auto& c : lib.classes)
        if (split == Split::val_unseen || !c.held_out) pool.push_back(c.id);
    if (pool.empty()) throw ConfigError("no landmark classes available for split " + std::string(split_name(split)));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t next = 0;
    w.placements.assign(w.size(), {});
    for (int u = 0; u < w.size(); ++u) {
        for (const auto& nv : w.nav[u]) {
            if (cfg.landmark_density < 1.0 && uniform01(rng) >= cfg.landmark_density) continue;
            if (next == pool.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                next = 0;
            }
            w.placements[u].push_back({pool[next++], nv.view});
        }
    }
    refresh_clean(w, lib);
    render(w, rng);
    return w;
}

World build_world(const std::vector<Node>& nodes, const std::vector<std::pair<int, int>>& edges, int K,
                  const LandmarkLibrary& lib) {
    World w;
    w.K = K;
    w.d_v = lib.d_v;
    w.nodes = nodes;
    for (auto [u, v] : edges)
        if (u < 0 || v < 0 || u >= w.size() || v >= w.size() || u == v) throw ConfigError("bad edge");
    assign_views(w, edges);
    w.placements.assign(w.size(), {});
    refresh_clean(w, lib);
    w.panoramas = w.clean;
    return w;
}

void place_landmark(World& w, const LandmarkLibrary& lib, int node, int view, int class_id) {
    check_node(w, node);
    if (view < 0 || view >= w.K) throw LookupError("view out of range");
    lib.at(class_id);
    auto& ps = w.placements[node];
    ps.erase(std::remove_if(ps.begin(), ps.end(), [view](const Placement& p) { return p.view == view; }), ps.end());
    ps.push_back({class_id, view});
    std::sort(ps.begin(), ps.end(), [](const Placement& a, const Placement& b) { return a.view < b.view; });
    refresh_clean(w, lib);
    w.panoramas[node] = w.clean[node];
}

const std::vector<NavView>& navigable(const World& w, int node) {
    check_node(w, node);
    return w.nav[node];
}

Panorama observation_at(const World& w, int node, Rng& rng) {
    check_node(w, node);
    Panorama p{w.K, w.d_v, w.clean[node]};
    add_gaussian_noise(p.features, w.sigma_obs, rng);
    return p;
}

Path shortest_path(const World& w, int a, int b) {
    check_node(w, a);
    check_node(w, b);
    const int n = w.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[b] = 0.0;
    pq.push({0.0, b});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (const auto& nv : w.nav[u]) {
            const double nd = d + w.distance(u, nv.neighbor);
            if (nd < dist[nv.neighbor]) {
                dist[nv.neighbor] = nd;
                pq.push({nd, nv.neighbor});
            }
        }
    }
    if (!std::isfinite(dist[a])) throw ContractError("no path between nodes");
    // Walk forward choosing the smallest-id neighbor that stays on a shortest path.
    Path p;
    p.nodes.push_back(a);
    int u = a;
    while (u != b) {
        int next = -1;
        for (const auto& nv : w.nav[u]) {
            const double via = w.distance(u, nv.neighbor) + dist[nv.neighbor];
            if (std::abs(via - dist[u]) <= 1e-9 * std::max(1.0, dist[u]) && (next < 0 || nv.neighbor < next))
                next = nv.neighbor;
        }
        p.length += w.distance(u, next);
        p.nodes.push_back(next);
        u = next;
    }
    return p;
}

std::vector<std::pair<int, int>> episode_pairs(const World& w, Mode mode) {
    std::vector<std::pair<int, int>> out;
    for (int a = 0; a < w.size(); ++a)
        for (int b = 0; b < w.size(); ++b) {
            if (a == b) continue;
            if (mode == Mode::coarse && w.placements[b].empty()) continue;
            const int e = static_cast<int>(shortest_path(w, a, b).nodes.size()) - 1;
            if (e >= kMinPathEdges && e <= kMaxPathEdges) out.emplace_back(a, b);
        }
    return out;
}

Episode sample_episode(const World& w, Mode mode, std::uint64_t seed) {
    return sample_episode(w, mode, seed, episode_pairs(w, mode));
}

Episode sample_episode(const World& w, Mode mode, std::uint64_t seed, const std::vector<std::pair<int, int>>& pairs) {
    if (pairs.empty()) throw SamplingError("no start/goal pair with a 3-7 edge path");
    Rng rng = make_rng(seed, 0xe1);
    const auto [a, b] = pairs[uniform_index(rng, pairs.size())];
    Episode e;
    e.world_id = w.id;
    e.start = a;
    e.goal = b;
    e.mode = mode;
    e.teacher_path = shortest_path(w, a, b).nodes;
    if (mode == Mode::coarse) {
        const auto& ps = w.placements[b];
        e.target_landmark = ps[uniform_index(rng, ps.size())].class_id;
    }
    return e;
}

void write_library(std::ostream& os, const LandmarkLibrary& lib) {
    os << "LIBRARY\t" << lib.d_v << "\t" << lib.classes.size() << "\n";
    for (const auto& c : lib.classes)
        os << "CLASS\t" << c.id << "\t" << (c.held_out ? 1 : 0) << "\t" << c.phrase << "\t"
           << records::join_floats(c.prototype) << "\n";
    os << "BACKGROUND\t" << records::join_floats(lib.background) << "\n";
}

void write_world(std::ostream& os, const World& w) {
    os << "WORLD\t" << w.id << "\t" << split_name(w.split) << "\t" << w.K << "\t" << w.d_v << "\t"
       << records::format_double(w.sigma_obs) << "\t" << w.size() << "\n";
    for (const auto& n : w.nodes)
        os << "NODE\t" << w.id << "\t" << n.id << "\t" << records::format_double(n.x) << "\t"
           << records::format_double(n.y) << "\n";
    for (int u = 0; u < w.size(); ++u)
        for (const auto& nv : w.nav[u]) os << "NAV\t" << w.id << "\t" << u << "\t" << nv.view << "\t" << nv.neighbor << "\n";
    for (int u = 0; u < w.size(); ++u)
        for (const auto& p : w.placements[u])
            os << "PLACE\t" << w.id << "\t" << u << "\t" << p.view << "\t" << p.class_id << "\n";
    for (int u = 0; u < w.size(); ++u)
        os << "PANO\t" << w.id << "\t" << u << "\t" << records::join_floats(w.panoramas[u]) << "\n";
}

void write_episode(std::ostream& os, const Episode& e) {
    std::string path;
    for (std::size_t i = 0; i < e.teacher_path.size(); ++i) {
        if (i) path += ",";
        path += std::to_string(e.teacher_path[i]);
    }
    os << "EPISODE\t" << e.id << "\t" << e.world_id << "\t" << e.start << "\t" << e.goal << "\t" << mode_name(e.mode)
       << "\t" << e.target_landmark << "\t" << e.start_heading << "\t" << path << "\n";
}

Episode parse_episode(const records::Line& l) {
    const int ln = l.number;
    records::require_fields(l, 9);
    Episode e;
    e.id = records::to_int(l.fields[1], ln);
    e.world_id = records::to_int(l.fields[2], ln);
    e.start = records::to_int(l.fields[3], ln);
    e.goal = records::to_int(l.fields[4], ln);
    e.mode = parse_mode(l.fields[5]);
    e.target_landmark = records::to_int(l.fields[6], ln);
    e.start_heading = records::to_int(l.fields[7], ln);
    e.teacher_path = records::to_ints(l.fields[8], ln);
    return e;
}

void write_world_file(std::ostream& os, const WorldFile& f) {
    os << "FORMAT\timnav-world\t1\n";
    write_library(os, f.library);
    for (const auto& w : f.worlds) write_world(os, w);
    for (const auto& e : f.episodes) write_episode(os, e);
}

WorldFile read_world_file(std::istream& is) {
    WorldFile f;
    const auto lines = records::read_lines(is);
    if (lines.empty() || lines[0].fields.size() < 3 || lines[0].fields[0] != "FORMAT" ||
        lines[0].fields[1] != "imnav-world")
        throw FormatError("not a world file");
    if (lines[0].fields[2] != "1") throw FormatError("unsupported world file version " + lines[0].fields[2]);
    auto world_ref = [&f](const records::Line& l) -> World& {
        const int id = records::to_int(l.fields[1], l.number);
        for (auto& w : f.worlds)
            if (w.id == id) return w;
        throw FormatError("line " + std::to_string(l.number) + ": unknown world " + l.fields[1]);
    };
    auto node_ref = [](World& w, const records::Line& l, const std::string& s) {
        const int n = records::to_int(s, l.number);
        if (n < 0 || n >= w.size()) throw FormatError("line " + std::to_string(l.number) + ": node out of range");
        return n;
    };
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& l = lines[i];
        const std::string& tag = l.fields[0];
        auto ln = l.number;
        if (tag == "LIBRARY") {
            records::require_fields(l, 3);
            f.library.d_v = records::to_int(l.fields[1], ln);
        } else if (tag == "CLASS") {
            records::require_fields(l, 5);
            LandmarkClass c;
            c.id = records::to_int(l.fields[1], ln);
            c.held_out = l.fields[2] == "1";
            c.phrase = l.fields[3];
            c.prototype = records::to_floats(l.fields[4], ln);
            if (c.id != f.library.size() || static_cast<int>(c.prototype.size()) != f.library.d_v)
                throw FormatError("line " + std::to_string(ln) + ": malformed class record");
            f.library.classes.push_back(std::move(c));
        } else if (tag == "BACKGROUND") {
            records::require_fields(l, 2);
            f.library.background = records::to_floats(l.fields[1], ln);
        } else if (tag == "WORLD") {
            records::require_fields(l, 7);
            World w;
            w.id = records::to_int(l.fields[1], ln);
            w.split = parse_split(l.fields[2]);
            w.K = records::to_int(l.fields[3], ln);
            w.d_v = records::to_int(l.fields[4], ln);
            w.sigma_obs = records::to_double(l.fields[5], ln);
            const int n = records::to_int(l.fields[6], ln);
            w.nodes.assign(n, {});
            w.nav.assign(n, {});
            w.placements.assign(n, {});
            w.panoramas.assign(n, {});
            f.worlds.push_back(std::move(w));
        } else if (tag == "NODE") {
            records::require_fields(l, 5);
            World& w = world_ref(l);
            const int u = node_ref(w, l, l.fields[2]);
            w.nodes[u] = {u, records::to_double(l.fields[3], ln), records::to_double(l.fields[4], ln)};
        } else if (tag == "NAV") {
            records::require_fields(l, 5);
            World& w = world_ref(l);
            const int u = node_ref(w, l, l.fields[2]);
            w.nav[u].push_back({records::to_int(l.fields[3], ln), node_ref(w, l, l.fields[4])});
        } else if (tag == "PLACE") {
            records::require_fields(l, 5);
            World& w = world_ref(l);
            const int u = node_ref(w, l, l.fields[2]);
            w.placements[u].push_back({records::to_int(l.fields[4], ln), records::to_int(l.fields[3], ln)});
        } else if (tag == "PANO") {
            records::require_fields(l, 4);
            World& w = world_ref(l);
            const int u = node_ref(w, l, l.fields[2]);
            w.panoramas[u] = records::to_floats(l.fields[3], ln);
            if (static_cast<int>(w.panoramas[u].size()) != w.K * w.d_v)
                throw FormatError("line " + std::to_string(ln) + ": panorama has wrong length");
        } else if (tag == "EPISODE") {
            f.episodes.push_back(parse_episode(l));
        } else {
            throw FormatError("line " + std::to_string(ln) + ": unknown record '" + tag + "'");
        }
    }
    for (auto& w : f.worlds) refresh_clean(w, f.library);
    return f;
}

}  // namespace imnav::world
