#include "imnav/dataset.hpp"

#include "imnav/errors.hpp"

namespace imnav::data {

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::correct: return "correct";
        case Policy::null: return "null";
        case Policy::wrong: return "wrong";
        case Policy::goal_only: return "goal_only";
        case Policy::none: return "none";
    }
    return "?";
}

Policy parse_policy(const std::string& s) {
    for (Policy p : {Policy::correct, Policy::null, Policy::wrong, Policy::goal_only, Policy::none})
        if (s == policy_name(p)) return p;
    throw ConfigError("unknown imagination policy '" + s + "'");
}

const world::World& Dataset::world_of(const world::Episode& ep) const {
    for (const auto& w : worlds.worlds)
        if (w.id == ep.world_id) return w;
    throw LookupError("episode " + std::to_string(ep.id) + " refers to missing world " + std::to_string(ep.world_id));
}

std::vector<const instr::CorpusEntry*> Dataset::split(world::Split s) const {
    std::vector<const instr::CorpusEntry*> out;
    for (const auto& e : corpus)
        if (e.split == s) out.push_back(&e);
    return out;
}

std::vector<int> noun_positions(const instr::SubInstruction& sub) {
    std::vector<int> out;
    for (const auto& np : sub.noun_phrases)
        for (int i = np.span.start; i < np.span.end; ++i) out.push_back(i);
    return out;
}

agent::EpisodeInput make_input(const Dataset& ds, const instr::CorpusEntry& entry,
                               const std::vector<imag::Imagination>& imaginations, bool masked) {
    agent::EpisodeInput in;
    in.world = &ds.world_of(entry.episode);
    in.episode = &entry.episode;
    in.tokens = ds.vocab.encode(entry.instruction.tokens);
    for (const auto& sub : entry.subs)
        if (sub.verdict == instr::Verdict::kept && sub.landmark_class >= 0)
            in.landmark_phrases.push_back(noun_positions(sub));
    for (const auto& im : imaginations) {
        agent::ImaginationToken tok;
        tok.feature = im.feature;
        tok.visible = !masked;
        // Positions are only meaningful for the instruction that owns the imagination.
        if (im.instruction_id == entry.instruction.id) {
            for (const auto& sub : entry.subs)
                if (sub.index == im.sub_index) tok.noun_positions = noun_positions(sub);
        }
        in.imaginations.push_back(std::move(tok));
    }
    return in;
}

agent::EpisodeInput policy_input(const Dataset& ds, const instr::CorpusEntry& entry, Policy policy,
                                 const imag::ImaginationSet* wrong) {
    static const std::vector<imag::Imagination> empty;
    const int id = entry.instruction.id;
    auto own = ds.imaginations.find(id);
    const auto& list = own == ds.imaginations.end() ? empty : own->second;
    switch (policy) {
        case Policy::correct: return make_input(ds, entry, list);
        case Policy::null: return make_input(ds, entry, list, true);
        case Policy::goal_only: return make_input(ds, entry, imag::goal_only(list));
        case Policy::none: return make_input(ds, entry, empty);
        case Policy::wrong: {
            if (!wrong) throw ContractError("wrong policy needs a shuffled imagination set");
            auto it = wrong->find(id);
            return make_input(ds, entry, it == wrong->end() ? empty : it->second);
        }
    }
    throw ContractError("unhandled policy");
}

void drop_landmarks(agent::EpisodeInput& in, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("landmark dropout rate must be in [0, 1)");
    for (const auto& phrase : in.landmark_phrases)
        if (uniform01(rng) < rate) in.masked_tokens.insert(in.masked_tokens.end(), phrase.begin(), phrase.end());
}

}  // namespace imnav::data
