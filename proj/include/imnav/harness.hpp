#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "imnav/agent.hpp"
#include "imnav/dataset.hpp"
#include "imnav/eval.hpp"
#include "imnav/imagination.hpp"
#include "imnav/instructions.hpp"
#include "imnav/training.hpp"
#include "imnav/world.hpp"

namespace imnav::harness {

// key=value lines grouped under [section] headers; '#' starts a comment line.
class Ini {
public:
    static Ini parse(std::istream& is);
    static Ini load(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    bool has_section(const std::string& section) const { return sections_.count(section) != 0; }
    std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
    // The section's entries as key=value lines, for the config parsers of other modules.
    std::string section_text(const std::string& section) const;
    const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

enum class Condition {
    baseline,
    imagine,
    null_test,
    wrong_test,
    goal_only,
    text_only,
    no_aux,
    infonce,
    transformer_encoder,
    visual_concat,
    late_fusion,
};

const char* condition_name(Condition c);
Condition parse_condition(const std::string& s);
// Test-time conditions reuse the imagine checkpoint.
bool is_test_condition(Condition c);

struct ExperimentSpec {
    std::string name = "experiment";
    world::LibraryConfig library;
    std::uint64_t library_seed = 2024;
    world::WorldConfig world;
    int train_worlds = 24;
    int unseen_worlds = 4;
    instr::CorpusConfig corpus;
    imag::ImaginationConfig imagination;
    agent::AgentConfig agent;    // vocab and d_v are filled from the assets
    train::TrainConfig pretrain;  // baseline training
    train::TrainConfig finetune;  // imagination finetuning from the baseline
    std::vector<Condition> conditions{Condition::baseline, Condition::imagine};
    std::vector<std::uint64_t> seeds{1};
    std::vector<world::Split> splits{world::Split::val_unseen};

    void validate() const;
    static ExperimentSpec from_ini(const Ini& ini);
    static ExperimentSpec load(const std::string& path);
};

// Library, templates, lexicon and vocabulary shared by every seed.
struct Assets {
    world::LandmarkLibrary library;
    instr::TemplateSet templates;
    instr::FilterLexicon lexicon;
    instr::Vocabulary vocab;
};

Assets load_assets(const std::string& data_dir, const world::LibraryConfig& cfg, std::uint64_t library_seed);
// Lexicon and vocabulary for an existing library (e.g. one read from a world file).
Assets assets_for(const std::string& data_dir, const world::LandmarkLibrary& library);

world::WorldFile make_worlds(const ExperimentSpec& spec, const world::LandmarkLibrary& lib, std::uint64_t seed);
data::Dataset make_dataset(const ExperimentSpec& spec, const Assets& assets, std::uint64_t seed);

// Agent configuration used by a condition (architecture variants change it).
agent::AgentConfig condition_agent(const ExperimentSpec& spec, const Assets& assets, Condition c);
train::TrainConfig condition_train(const ExperimentSpec& spec, Condition c, std::uint64_t seed);
// Policy used when evaluating a condition.
data::Policy condition_policy(Condition c);
// Copies every parameter of `from` whose name and shape exist in `to`.
void transplant(const agent::Agent& from, agent::Agent& to);

// Starting point for a condition's training: a fresh agent for the baseline,
// the baseline's parameters under the condition's config otherwise.
agent::Agent initial_agent(const ExperimentSpec& spec, const Assets& assets, Condition c,
                           const agent::Agent* baseline, std::uint64_t seed);

// Entries whose instruction carries at least two imaginations.
std::vector<const instr::CorpusEntry*> multi_landmark(const data::Dataset& ds,
                                                      const std::vector<const instr::CorpusEntry*>& entries);
std::string multi_split_name(world::Split s);

struct RunOptions {
    std::string out_dir;     // empty: keep everything in memory
    std::string command;     // written into artifact headers
    std::ostream* log = nullptr;
};

// Trains every needed checkpoint once per seed and evaluates each condition on
// every configured split plus its multi-landmark subset. The policy column of
// each row holds the condition name.
std::vector<eval::MetricsRecord> run_ablation(const ExperimentSpec& spec, const Assets& assets,
                                              const RunOptions& opts = {});

struct Summary {
    std::string condition;
    std::string split;
    int runs = 0;
    double sr_mean = 0.0;  // percentage points
    double sr_sd = 0.0;
    double spl_mean = 0.0;
    double spl_sd = 0.0;
};

double mean(const std::vector<double>& v);
double sample_stdev(const std::vector<double>& v);  // 0 for fewer than two values

// Groups rows by (condition, split) in order of first appearance.
std::vector<Summary> summarize(const std::vector<eval::MetricsRecord>& rows);
void write_summary_tsv(std::ostream& os, const std::vector<Summary>& s);
void write_summary_table(std::ostream& os, const std::vector<Summary>& s);

struct Verdict {
    std::string hypothesis;
    bool pass = false;
    double delta = 0.0;  // SR points
};

// One verdict per ordering hypothesis whose conditions are present.
std::vector<Verdict> verdicts(const std::vector<Summary>& s, world::Split split = world::Split::val_unseen);
std::string format_verdict(const Verdict& v);

const Summary* find_summary(const std::vector<Summary>& s, const std::string& condition, const std::string& split);

}  // namespace imnav::harness
