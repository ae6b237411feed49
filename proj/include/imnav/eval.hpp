#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "imnav/agent.hpp"
#include "imnav/dataset.hpp"

namespace imnav::eval {

inline constexpr double kSuccessRadius = 1.0;

struct EpisodeResult {
    int episode_id = 0;
    int final_node = 0;
    bool success = false;
    double ne = 0.0;
    double tl = 0.0;
    double shortest = 0.0;  // l
    double path = 0.0;      // p, equal to tl
    bool coarse = false;
    bool grounded = false;
};

struct MetricsRecord {
    std::string split;
    std::string policy;
    double sr = 0.0;  // fractions in [0, 1]
    double spl = 0.0;
    double ne = 0.0;
    double tl = 0.0;
    bool coarse = false;
    double rgs = 0.0;
    double rgspl = 0.0;
    int n = 0;
    std::uint64_t seed = 0;
};

bool success(double distance, double radius = kSuccessRadius);
double navigation_error(const world::World& w, int final_node, int goal);
double trajectory_length(const world::World& w, const std::vector<int>& visited);
// (1/N) sum S_i l_i / max(p_i, l_i); ContractError if some l_i <= 0.
double spl(const std::vector<EpisodeResult>& results);
double rgspl(const std::vector<EpisodeResult>& results);
bool grounding_success(bool succeeded, const world::World& w, int stop_node, int chosen_view, int target_landmark,
                       world::Mode mode);

EpisodeResult score(const world::World& w, const world::Episode& ep, const agent::Trajectory& t,
                    double radius = kSuccessRadius);
MetricsRecord aggregate(const std::vector<EpisodeResult>& results, const std::string& split, const std::string& policy,
                        std::uint64_t seed);

// Anything that can drive an episode: the learned agent or a replay of the teacher.
class Navigator {
public:
    virtual ~Navigator() = default;
    virtual agent::Trajectory navigate(const agent::EpisodeInput& in, std::uint64_t seed) const = 0;
};

class AgentNavigator : public Navigator {
public:
    explicit AgentNavigator(const agent::Agent& a, int max_steps = 15) : agent_(a), max_steps_(max_steps) {}
    agent::Trajectory navigate(const agent::EpisodeInput& in, std::uint64_t seed) const override;

private:
    const agent::Agent& agent_;
    int max_steps_;
};

// Follows the teacher path and grounds the target landmark exactly.
class TeacherNavigator : public Navigator {
public:
    agent::Trajectory navigate(const agent::EpisodeInput& in, std::uint64_t seed) const override;
};

// Episodes run in parallel; each uses its own substream and results keep corpus order.
std::vector<EpisodeResult> run_episodes(const Navigator& nav, const data::Dataset& ds,
                                        const std::vector<const instr::CorpusEntry*>& entries, data::Policy policy,
                                        std::uint64_t seed);

MetricsRecord evaluate(const Navigator& nav, const data::Dataset& ds, world::Split split, data::Policy policy,
                       std::uint64_t seed);

// Percentages with two decimals; RGS columns are "-" outside coarse mode.
void write_metrics_tsv(std::ostream& os, const std::vector<MetricsRecord>& rows);
void write_metrics_table(std::ostream& os, const std::vector<MetricsRecord>& rows);
std::vector<MetricsRecord> read_metrics_tsv(std::istream& is);

}  // namespace imnav::eval
