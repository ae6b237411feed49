#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "imnav/agent.hpp"
#include "imnav/dataset.hpp"
#include "imnav/numcore/adam.hpp"

namespace imnav::train {

enum class AuxLoss { none, cosine, infonce };
enum class Schedule { pretrain, three_stage };

const char* aux_name(AuxLoss a);
AuxLoss parse_aux(const std::string& s);
const char* schedule_name(Schedule s);
Schedule parse_schedule(const std::string& s);

struct TrainConfig {
    int iterations = 20000;
    int batch = 8;
    double lambda = 0.5;          // weight of the cosine loss
    AuxLoss aux = AuxLoss::cosine;
    double infonce_lambda = 0.2;
    double tau = 0.1;
    Schedule schedule = Schedule::three_stage;
    double fractions[3] = {0.25, 0.25, 0.5};
    double stage1_imagination = 1e-4;
    double stage2_imagination = 5e-5;
    double stage2_base = 1e-6;
    double stage3_all = 1e-6;
    double lr_multiplier = 10.0;
    double pretrain_lr = 1e-3;    // single rate for every group under the pretrain schedule
    bool imaginations = true;     // false trains the baseline without imagination tokens
    double landmark_dropout = 0.0;  // chance that a landmark phrase is blanked in a training instruction
    int eval_interval = 0;        // 0 disables validation during training
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_text() const;
    static TrainConfig parse(const std::string& text);
    // Weight applied to the active auxiliary loss.
    double aux_weight() const;
};

struct LossBreakdown {
    double l_base = 0.0;
    double l_aux = 0.0;
    double total = 0.0;
    int n_im = 0;
};

// Mean cross-entropy over steps.
template <typename T>
nc::BasicVar<T> imitation_loss(const std::vector<nc::BasicVar<T>>& step_logits, const std::vector<int>& teacher_actions);

// value is invalid when skipped (no pairs).
template <typename T>
struct AuxValue {
    nc::BasicVar<T> value;
    bool skipped = true;
};

// (1/N) sum (1 - cos(h_i, s_i)).
template <typename T>
AuxValue<T> cosine_alignment_loss(const std::vector<nc::BasicVar<T>>& h, const std::vector<nc::BasicVar<T>>& s);

// Negatives for pair i are the s_j whose owner differs from owner[i].
template <typename T>
AuxValue<T> infonce_loss(const std::vector<nc::BasicVar<T>>& h, const std::vector<nc::BasicVar<T>>& s,
                         const std::vector<int>& owner, double tau);

template <typename T>
nc::BasicVar<T> total_loss(nc::BasicVar<T> base, nc::BasicVar<T> aux, double lambda);

struct StageRates {
    int stage = 0;  // 0 under the pretrain schedule
    std::map<nc::Group, double> lr;
};

StageRates schedule_at(int iter, const TrainConfig& cfg);

struct CurvePoint {
    int iter = 0;
    double l_base = 0.0;
    double l_aux = 0.0;
    bool evaluated = false;
    double val_sr = 0.0;
};

void write_curve(std::ostream& os, const std::vector<CurvePoint>& curve);
std::vector<CurvePoint> read_curve(std::istream& is);

struct TrainState {
    agent::Agent agent;
    nc::Adam adam;
    TrainConfig cfg;
    int iteration = 0;
    Rng rng;
    std::vector<CurvePoint> curve;
    std::string command;  // producing command line, kept in the checkpoint
};

TrainState init_state(agent::Agent agent, const TrainConfig& cfg);

// Validation success rate, called every eval_interval iterations.
using Validator = std::function<double(const agent::Agent&)>;

// Runs iterations [state.iteration, until) on the train split.
void train(TrainState& state, const data::Dataset& ds, int until, const Validator& validate = {});
inline void train(TrainState& state, const data::Dataset& ds, const Validator& validate = {}) {
    train(state, ds, state.cfg.iterations, validate);
}

// Loss of one batch of corpus entries; gradients are accumulated when the tape records them.
LossBreakdown batch_loss(nc::Tape& tape, agent::Agent& agent, const data::Dataset& ds,
                         const std::vector<const instr::CorpusEntry*>& batch, const TrainConfig& cfg, Rng& rng,
                         bool backward);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace imnav::train
