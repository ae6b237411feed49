#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "imnav/instructions.hpp"
#include "imnav/rng.hpp"
#include "imnav/world.hpp"

namespace imnav::imag {

struct Imagination {
    std::vector<float> feature;  // d_v
    int instruction_id = 0;
    int sub_index = 0;
    int true_class = -1;
    int emitted_class = -1;
    bool corrupted = false;
};

struct ImaginationConfig {
    double sigma_gen = 0.05;
    double fidelity = 0.95;
    void validate() const;
};

// Instruction id -> imaginations in sub-instruction order. Every corpus
// instruction has an entry, possibly empty.
using ImaginationSet = std::map<int, std::vector<Imagination>>;

Imagination imagine(const instr::SubInstruction& sub, int instruction_id, const world::LandmarkLibrary& lib,
                    const ImaginationConfig& cfg, Rng& rng);

// One imagination per kept sub-instruction; instruction i draws from substream (seed, i).
ImaginationSet imagine_dataset(const std::vector<instr::CorpusEntry>& corpus, const world::LandmarkLibrary& lib,
                               const ImaginationConfig& cfg, std::uint64_t seed);

struct FidelityReport {
    double frac_detected = 0.0;      // over imaginations
    double frac_all_detected = 0.0;  // over instructions with at least one imagination
    int imaginations = 0;
    int instructions = 0;
};
FidelityReport fidelity_check(const ImaginationSet& set, const world::LandmarkLibrary& lib);

std::vector<Imagination> goal_only(const std::vector<Imagination>& list);

// Instruction-level derangement over instructions with nonempty lists.
ImaginationSet shuffle_wrong(const ImaginationSet& set, std::uint64_t seed);

std::size_t total_count(const ImaginationSet& set);

void write_imaginations(std::ostream& os, const ImaginationSet& set);
// true_class and corrupted are restored from the corpus' gold landmarks.
ImaginationSet read_imaginations(std::istream& is, const std::vector<instr::CorpusEntry>& corpus);

}  // namespace imnav::imag
