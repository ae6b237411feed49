#pragma once

#include <string>

#include "imnav/dataset.hpp"
#include "imnav/imagination.hpp"
#include "imnav/instructions.hpp"
#include "imnav/world.hpp"

namespace imnav::testing {

inline std::string data_path(const std::string& name) { return std::string(IMNAV_DATA_DIR) + "/" + name; }

inline const world::LandmarkLibrary& library() {
    static const world::LandmarkLibrary lib =
        world::generate_library(world::load_phrases(data_path("landmarks.txt")), {}, 2024);
    return lib;
}

struct TextKit {
    instr::TemplateSet templates;
    instr::FilterLexicon lexicon;
    instr::Vocabulary vocab;
};

inline const TextKit& text_kit() {
    static const TextKit kit = [] {
        TextKit k;
        k.templates = instr::load_templates(data_path("templates.txt"));
        k.lexicon = instr::load_lexicon(data_path("lexicon.txt"), library());
        k.vocab = instr::build_vocabulary(k.templates, library(), k.lexicon);
        return k;
    }();
    return kit;
}

inline world::WorldFile small_world_file(std::uint64_t seed, int train_worlds = 3, int unseen_worlds = 2) {
    world::WorldFile f;
    f.library = library();
    for (int i = 0; i < train_worlds + unseen_worlds; ++i) {
        auto split = i < train_worlds ? world::Split::train : world::Split::val_unseen;
        f.worlds.push_back(world::generate_world({}, library(), split, derive_seed(seed, i)));
        f.worlds.back().id = i;
    }
    return f;
}

inline data::Dataset small_dataset(std::uint64_t seed, int train = 20, int val_seen = 5, int val_unseen = 10,
                                   world::Mode mode = world::Mode::fine) {
    const auto& kit = text_kit();
    data::Dataset ds;
    ds.worlds = small_world_file(seed);
    instr::CorpusConfig cc;
    cc.train = train;
    cc.val_seen = val_seen;
    cc.val_unseen = val_unseen;
    cc.mode = mode;
    ds.corpus = instr::generate_corpus(ds.worlds, kit.templates, kit.lexicon, kit.vocab, cc, seed);
    ds.imaginations = imag::imagine_dataset(ds.corpus, library(), {}, seed);
    ds.vocab = kit.vocab;
    return ds;
}

}  // namespace imnav::testing
