#pragma once

#include <string>
#include <vector>

#include "imnav/agent.hpp"
#include "imnav/imagination.hpp"
#include "imnav/instructions.hpp"
#include "imnav/world.hpp"

namespace imnav::data {

// Test-time imagination conditions.
enum class Policy { correct, null, wrong, goal_only, none };

const char* policy_name(Policy p);
Policy parse_policy(const std::string& s);

struct Dataset {
    world::WorldFile worlds;
    std::vector<instr::CorpusEntry> corpus;
    imag::ImaginationSet imaginations;
    instr::Vocabulary vocab;

    const world::World& world_of(const world::Episode& ep) const;
    std::vector<const instr::CorpusEntry*> split(world::Split s) const;
};

// Token positions of every noun phrase in the sub-instruction.
std::vector<int> noun_positions(const instr::SubInstruction& sub);

// Builds the agent input for one corpus entry. `imaginations` is the list to
// show (already shuffled or truncated by the caller); null masks all of them.
agent::EpisodeInput make_input(const Dataset& ds, const instr::CorpusEntry& entry,
                               const std::vector<imag::Imagination>& imaginations, bool masked = false);

// Applies a policy to the dataset's imaginations for one entry. `wrong` must
// hold the shuffled set when policy is wrong.
agent::EpisodeInput policy_input(const Dataset& ds, const instr::CorpusEntry& entry, Policy policy,
                                 const imag::ImaginationSet* wrong = nullptr);

// Blanks each landmark phrase of the instruction independently with probability rate.
void drop_landmarks(agent::EpisodeInput& in, double rate, Rng& rng);

}  // namespace imnav::data
