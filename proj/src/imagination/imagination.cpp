#include "imnav/imagination.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::imag {

void ImaginationConfig::validate() const {
    if (!(fidelity >= 0.0 && fidelity <= 1.0)) throw ConfigError("fidelity must be in [0, 1]");
    if (!(sigma_gen >= 0.0)) throw ConfigError("sigma_gen must be non-negative");
}

Imagination imagine(const instr::SubInstruction& sub, int instruction_id, const world::LandmarkLibrary& lib,
                    const ImaginationConfig& cfg, Rng& rng) {
    if (sub.verdict != instr::Verdict::kept) throw ContractError("imagine called on a filtered-out sub-instruction");
    if (sub.landmark_class < 0) throw ContractError("sub-instruction has no gold landmark");
    cfg.validate();
    Imagination im;
    im.instruction_id = instruction_id;
    im.sub_index = sub.index;
    im.true_class = lib.at(sub.landmark_class).id;
    im.emitted_class = im.true_class;
    const bool hit = uniform01(rng) < cfg.fidelity;
    if (!hit && lib.size() > 1) {
        int other = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(lib.size() - 1)));
        if (other >= im.true_class) ++other;
        im.emitted_class = other;
    }
    im.corrupted = im.emitted_class != im.true_class;
    im.feature = lib.at(im.emitted_class).prototype;
    add_gaussian_noise(im.feature, cfg.sigma_gen, rng);
    return im;
}

ImaginationSet imagine_dataset(const std::vector<instr::CorpusEntry>& corpus, const world::LandmarkLibrary& lib,
                               const ImaginationConfig& cfg, std::uint64_t seed) {
    ImaginationSet out;
    for (const auto& e : corpus) {
        const int id = e.instruction.id;
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(id));
        auto& list = out[id];
        for (const auto* s : e.kept()) list.push_back(imagine(*s, id, lib, cfg, rng));
    }
    return out;
}

FidelityReport fidelity_check(const ImaginationSet& set, const world::LandmarkLibrary& lib) {
    FidelityReport r;
    long detected = 0, all = 0;
    for (const auto& [id, list] : set) {
        if (list.empty()) continue;
        ++r.instructions;
        bool every = true;
        for (const auto& im : list) {
            ++r.imaginations;
            const bool ok = lib.nearest(im.feature.data()) == im.true_class;
            detected += ok;
            every = every && ok;
        }
        all += every;
    }
    if (r.imaginations == 0) throw InputError("fidelity_check on an empty imagination set");
    r.frac_detected = static_cast<double>(detected) / r.imaginations;
    r.frac_all_detected = static_cast<double>(all) / r.instructions;
    return r;
}

std::vector<Imagination> goal_only(const std::vector<Imagination>& list) {
    if (list.empty()) return {};
    return {list.back()};
}

ImaginationSet shuffle_wrong(const ImaginationSet& set, std::uint64_t seed) {
    std::vector<int> ids;
    for (const auto& [id, list] : set)
        if (!list.empty()) ids.push_back(id);
    if (ids.size() < 2) throw InputError("shuffle_wrong needs at least two instructions with imaginations");
    Rng rng = make_rng(seed, 0x5f);
    std::vector<std::size_t> perm(ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    bool deranged = false;
    for (int attempt = 0; attempt < 1000 && !deranged; ++attempt) {
        std::shuffle(perm.begin(), perm.end(), rng);
        deranged = true;
        for (std::size_t i = 0; i < perm.size(); ++i) deranged = deranged && perm[i] != i;
    }
    if (!deranged) std::rotate(perm.begin(), perm.begin() + 1, perm.end());
    ImaginationSet out = set;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = set.at(ids[perm[i]]);
    return out;
}

std::size_t total_count(const ImaginationSet& set) {
    std::size_t n = 0;
    for (const auto& [id, list] : set) n += list.size();
    return n;
}

void write_imaginations(std::ostream& os, const ImaginationSet& set) {
    os << "FORMAT\timnav-imagination\t1\n";
    for (const auto& [id, list] : set)
        for (const auto& im : list)
            os << "IMAG\t" << id << "\t" << im.sub_index << "\t" << im.emitted_class << "\t"
               << records::join_floats(im.feature) << "\n";
}

ImaginationSet read_imaginations(std::istream& is, const std::vector<instr::CorpusEntry>& corpus) {
    const auto lines = records::read_lines(is);
    if (lines.empty() || lines[0].fields.size() < 3 || lines[0].fields[0] != "FORMAT" ||
        lines[0].fields[1] != "imnav-imagination")
        throw FormatError("not an imagination file");
    if (lines[0].fields[2] != "1") throw FormatError("unsupported imagination version " + lines[0].fields[2]);
    std::map<int, const instr::CorpusEntry*> by_id;
    ImaginationSet out;
    for (const auto& e : corpus) {
        by_id[e.instruction.id] = &e;
        out[e.instruction.id];
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& l = lines[i];
        if (l.fields[0] != "IMAG") throw FormatError("line " + std::to_string(l.number) + ": unknown record");
        records::require_fields(l, 5);
        Imagination im;
        im.instruction_id = records::to_int(l.fields[1], l.number);
        im.sub_index = records::to_int(l.fields[2], l.number);
        im.emitted_class = records::to_int(l.fields[3], l.number);
        im.feature = records::to_floats(l.fields[4], l.number);
        auto it = by_id.find(im.instruction_id);
        if (it == by_id.end())
            throw FormatError("line " + std::to_string(l.number) + ": instruction " + l.fields[1] + " not in corpus");
        const auto& subs = it->second->subs;
        if (im.sub_index < 0 || im.sub_index >= static_cast<int>(subs.size()))
            throw FormatError("line " + std::to_string(l.number) + ": sub-instruction index out of range");
        im.true_class = subs[im.sub_index].landmark_class;
        im.corrupted = im.emitted_class != im.true_class;
        out[im.instruction_id].push_back(std::move(im));
    }
    return out;
}

}  // namespace imnav::imag
