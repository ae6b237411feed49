#include "imnav/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::eval {

bool success(double distance, double radius) { return distance <= radius; }

double navigation_error(const world::World& w, int final_node, int goal) { return w.distance(final_node, goal); }

double trajectory_length(const world::World& w, const std::vector<int>& visited) {
    double tl = 0.0;
    for (std::size_t i = 1; i < visited.size(); ++i) tl += w.distance(visited[i - 1], visited[i]);
    return tl;
}

namespace {

double weighted(const std::vector<EpisodeResult>& results, bool grounded_only) {
    if (results.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& r : results) {
        if (!(r.shortest > 0.0)) throw ContractError("SPL needs a positive shortest-path length");
        const bool s = grounded_only ? r.grounded : r.success;
        if (s) acc += r.shortest / std::max(r.path, r.shortest);
    }
    return acc / static_cast<double>(results.size());
}

}  // namespace

double spl(const std::vector<EpisodeResult>& results) { return weighted(results, false); }
double rgspl(const std::vector<EpisodeResult>& results) { return weighted(results, true); }

bool grounding_success(bool succeeded, const world::World& w, int stop_node, int chosen_view, int target_landmark,
                       world::Mode mode) {
    if (mode != world::Mode::coarse) throw ContractError("grounding success is defined for coarse episodes only");
    return succeeded && chosen_view >= 0 && w.placement_at(stop_node, chosen_view) == target_landmark;
}

EpisodeResult score(const world::World& w, const world::Episode& ep, const agent::Trajectory& t, double radius) {
    if (t.visited.empty()) throw ContractError("trajectory without visited nodes");
    EpisodeResult r;
    r.episode_id = ep.id;
    r.final_node = t.visited.back();
    r.ne = navigation_error(w, r.final_node, ep.goal);
    r.success = success(r.ne, radius);
    r.tl = trajectory_length(w, t.visited);
    r.path = r.tl;
    r.shortest = trajectory_length(w, ep.teacher_path);
    r.coarse = ep.mode == world::Mode::coarse;
    if (r.coarse) r.grounded = grounding_success(r.success, w, r.final_node, t.ground_view, ep.target_landmark, ep.mode);
    return r;
}

MetricsRecord aggregate(const std::vector<EpisodeResult>& results, const std::string& split, const std::string& policy,
                        std::uint64_t seed) {
    if (results.empty()) throw InputError("no episode results to aggregate");
    MetricsRecord m;
    m.split = split;
    m.policy = policy;
    m.seed = seed;
    m.n = static_cast<int>(results.size());
    double s = 0.0, ne = 0.0, tl = 0.0, g = 0.0;
    for (const auto& r : results) {
        s += r.success;
        ne += r.ne;
        tl += r.tl;
        g += r.grounded;
        m.coarse = m.coarse || r.coarse;
    }
    const double n = m.n;
    m.sr = s / n;
    m.ne = ne / n;
    m.tl = tl / n;
    m.spl = spl(results);
    if (m.coarse) {
        m.rgs = g / n;
        m.rgspl = rgspl(results);
    }
    return m;
}

agent::Trajectory AgentNavigator::navigate(const agent::EpisodeInput& in, std::uint64_t seed) const {
    return agent::rollout(agent_, in, {agent::RolloutMode::argmax, max_steps_, false}, seed);
}

agent::Trajectory TeacherNavigator::navigate(const agent::EpisodeInput& in, std::uint64_t) const {
    const auto& w = *in.world;
    const auto& ep = *in.episode;
    agent::Trajectory t;
    t.visited = ep.teacher_path;
    t.length = trajectory_length(w, t.visited);
    t.stopped = true;
    if (ep.mode == world::Mode::coarse)
        for (const auto& p : w.placements[ep.goal])
            if (p.class_id == ep.target_landmark) t.ground_view = p.view;
    return t;
}

std::vector<EpisodeResult> run_episodes(const Navigator& nav, const data::Dataset& ds,
                                        const std::vector<const instr::CorpusEntry*>& entries, data::Policy policy,
                                        std::uint64_t seed) {
    imag::ImaginationSet wrong;
    if (policy == data::Policy::wrong) {
        imag::ImaginationSet own;
        for (const auto* e : entries) {
            auto it = ds.imaginations.find(e->instruction.id);
            own[e->instruction.id] = it == ds.imaginations.end() ? std::vector<imag::Imagination>{} : it->second;
        }
        wrong = imag::shuffle_wrong(own, derive_seed(seed, 0x3a0));
    }
    const int n = static_cast<int>(entries.size());
    std::vector<EpisodeResult> out(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        try {
            const auto& e = *entries[i];
            auto in = data::policy_input(ds, e, policy, &wrong);
            auto t = nav.navigate(in, seed);
            out[i] = score(*in.world, e.episode, t);
        } catch (const std::exception& ex) {
            errors[i] = ex.what();
        }
    }
    for (int i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw Error("episode " + std::to_string(entries[i]->episode.id) + ": " + errors[i]);
    return out;
}

MetricsRecord evaluate(const Navigator& nav, const data::Dataset& ds, world::Split split, data::Policy policy,
                       std::uint64_t seed) {
    const auto entries = ds.split(split);
    if (entries.empty()) throw InputError(std::string("split ") + world::split_name(split) + " is empty");
    return aggregate(run_episodes(nav, ds, entries, policy, seed), world::split_name(split), data::policy_name(policy),
                     seed);
}

namespace {

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::vector<std::string> cells(const MetricsRecord& m) {
    return {m.split,
            m.policy,
            pct(m.sr),
            pct(m.spl),
            fixed2(m.ne),
            fixed2(m.tl),
            m.coarse ? pct(m.rgs) : "-",
            m.coarse ? pct(m.rgspl) : "-",
            std::to_string(m.n),
            std::to_string(m.seed)};
}

const std::vector<std::string> kColumns{"split", "policy", "SR", "SPL", "NE", "TL", "RGS", "RGSPL", "n", "seed"};

}  // namespace

void write_metrics_tsv(std::ostream& os, const std::vector<MetricsRecord>& rows) {
    for (std::size_t i = 0; i < kColumns.size(); ++i) os << (i ? "\t" : "") << kColumns[i];
    os << "\n";
    for (const auto& m : rows) {
        const auto c = cells(m);
        for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "\t" : "") << c[i];
        os << "\n";
    }
}

void write_metrics_table(std::ostream& os, const std::vector<MetricsRecord>& rows) {
    std::vector<std::vector<std::string>> all{kColumns};
    for (const auto& m : rows) all.push_back(cells(m));
    std::vector<std::size_t> width(kColumns.size(), 0);
    for (const auto& r : all)
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    for (const auto& r : all) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) os << "  ";
            if (i < 2) {
                os << std::left << std::setw(static_cast<int>(width[i])) << r[i];
            } else {
                os << std::right << std::setw(static_cast<int>(width[i])) << r[i];
            }
        }
        os << "\n";
    }
    os << std::right;
}

std::vector<MetricsRecord> read_metrics_tsv(std::istream& is) {
    std::vector<MetricsRecord> out;
    for (const auto& l : records::read_lines(is)) {
        if (l.fields[0] == "split") continue;
        if (l.fields.size() != kColumns.size())
            throw ParseError("line " + std::to_string(l.number) + ": expected " + std::to_string(kColumns.size()) +
                             " fields, got " + std::to_string(l.fields.size()));
        MetricsRecord m;
        m.split = l.fields[0];
        m.policy = l.fields[1];
        m.sr = records::to_double(l.fields[2], l.number) / 100.0;
        m.spl = records::to_double(l.fields[3], l.number) / 100.0;
        m.ne = records::to_double(l.fields[4], l.number);
        m.tl = records::to_double(l.fields[5], l.number);
        m.coarse = l.fields[6] != "-";
        if (m.coarse) {
            m.rgs = records::to_double(l.fields[6], l.number) / 100.0;
            m.rgspl = records::to_double(l.fields[7], l.number) / 100.0;
        }
        m.n = records::to_int(l.fields[8], l.number);
        m.seed = records::to_u64(l.fields[9], l.number);
        out.push_back(m);
    }
    return out;
}

}  // namespace imnav::eval
