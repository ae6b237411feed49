#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imnav/numcore/ops.hpp"
#include "imnav/numcore/tensor.hpp"
#include "imnav/world.hpp"

namespace imnav::agent {

enum class Fusion { early, late };
enum class ImaginationEncoder { mlp, transformer };
enum class ConcatTarget { text, visual };

struct AgentConfig {
    int d = 64;
    int heads = 4;
    int cross_layers = 2;
    int K = 12;
    int d_v = 16;
    int vocab = 0;
    int mlp_hidden = 0;  // 0 selects ceil(2d/3)
    double dropout_rate = 0.15;
    Fusion fusion = Fusion::early;
    ImaginationEncoder imagination_encoder = ImaginationEncoder::mlp;
    ConcatTarget concat_target = ConcatTarget::text;
    bool text_only = false;       // h_i replaced by the mean noun-phrase embedding
    bool order_encoding = false;  // sinusoidal index encoding on imagination tokens

    int hidden() const { return mlp_hidden > 0 ? mlp_hidden : (2 * d + 2) / 3; }
    void validate() const;
    // key=value lines; round-trips through parse.
    std::string to_text() const;
    static AgentConfig parse(const std::string& text);
};

const char* fusion_name(Fusion f);
const char* encoder_name(ImaginationEncoder e);
const char* concat_name(ConcatTarget c);

// One imagination as seen by the agent. noun_positions index the instruction
// tokens of its sub-instruction; they are needed only for text_only and the
// auxiliary losses.
struct ImaginationToken {
    std::vector<float> feature;
    std::vector<int> noun_positions;
    bool visible = true;
};

struct EpisodeInput {
    const world::World* world = nullptr;
    const world::Episode* episode = nullptr;
    std::vector<int> tokens;
    std::vector<ImaginationToken> imaginations;
    std::vector<std::vector<int>> landmark_phrases;  // token positions per landmark-bearing sub-instruction
    std::vector<int> masked_tokens;  // positions whose token embeddings are zeroed (training augmentation)
};

class Agent {
public:
    Agent() = default;
    Agent(const AgentConfig& cfg, std::uint64_t seed);

    const AgentConfig& config() const { return cfg_; }
    nc::ParamStore& params() { return params_; }
    const nc::ParamStore& params() const { return params_; }

    // Finetuning starts the imagination projection from the observation projection.
    void init_imagination_from_observation();

private:
    AgentConfig cfg_;
    nc::ParamStore params_;
};

// Attention of one layer, with the key layout of the language sequence.
struct StepRecord {
    int node = 0;
    int heading = 0;
    std::vector<int> candidates;  // navigable views, in logit order; stop is last
    std::vector<float> logits;
    int action = 0;
    std::vector<nc::AttentionWeights> cross;  // per layer: visual queries over language keys
};

struct Trajectory {
    std::vector<int> visited;
    std::vector<StepRecord> steps;
    std::vector<nc::AttentionWeights> language;  // per layer: language self-attention
    int text_length = 0;
    int imagination_count = 0;
    int ground_view = -1;  // coarse mode, view chosen at stop
    bool stopped = false;
    double length = 0.0;
};

enum class RolloutMode { teacher, argmax };

struct RolloutOptions {
    RolloutMode mode = RolloutMode::argmax;
    int max_steps = 15;
    bool record_attention = false;
};

// Lowest index wins ties; -inf entries are never chosen unless all are -inf.
int select_action(const std::vector<float>& logits);

Trajectory rollout(const Agent& agent, const EpisodeInput& input, const RolloutOptions& opt, std::uint64_t seed);

// Teacher-forced graph for training and gradient checks.
template <typename T>
struct EpisodeGraph {
    nc::BasicVar<T> nav_loss;               // mean cross-entropy over steps (plus grounding in coarse mode)
    std::vector<nc::BasicVar<T>> h;         // encoded imaginations, visible ones only
    std::vector<nc::BasicVar<T>> sbar;      // matching mean noun-phrase embeddings
    std::vector<std::vector<float>> logits;  // per step
    std::vector<int> targets;
};

template <typename T>
EpisodeGraph<T> teacher_forced(nc::BasicTape<T>& tape, Agent& agent, const EpisodeInput& input, Rng& rng, bool train);

// Encoder pieces exposed for tests.
template <typename T>
nc::BasicVar<T> encode_text(nc::BasicTape<T>& tape, Agent& agent, const std::vector<int>& tokens);
template <typename T>
nc::BasicVar<T> encode_text(nc::BasicTape<T>& tape, Agent& agent, const std::vector<int>& tokens,
                            const std::vector<int>& masked);

template <typename T>
std::vector<nc::BasicVar<T>> encode_imaginations(nc::BasicTape<T>& tape, Agent& agent,
                                                 const std::vector<ImaginationToken>& imaginations, Rng& rng,
                                                 bool train);

template <typename T>
nc::BasicVar<T> mean_nounphrase_embedding(nc::BasicVar<T> text, const std::vector<int>& positions);

// Logits for one step given fixed language-side inputs; used by gradient and
// masking tests. Returns [navigable..., stop].
template <typename T>
nc::BasicVar<T> step_logits(nc::BasicTape<T>& tape, Agent& agent, const EpisodeInput& input, int node,
                            int heading, Rng& rng, bool train);

struct ProbeResult {
    int step = -1;
    std::vector<int> text_keys;  // token positions, ranked
    std::vector<int> views;      // view indices, ranked
};

// Ranks text keys by the imagination query's language attention and views by
// their cross-attention to that imagination, at the first step where the
// referent class is visible at the current node.
ProbeResult attention_probe(const Trajectory& traj, const world::World& w, int layer, int head, int imagination,
                            int referent_class, int k = 3);

// Indices of the k largest entries, descending; ties go to the lower index.
std::vector<int> top_k(const std::vector<float>& row, int k);

}  // namespace imnav::agent
