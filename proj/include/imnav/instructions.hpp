#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "imnav/world.hpp"

namespace imnav::instr {

inline constexpr int kMaxTokens = 80;

struct Span {
    int start = 0;
    int end = 0;  // exclusive
    bool operator==(const Span&) const = default;
};

struct Instruction {
    int id = 0;
    int episode_id = 0;
    world::Mode mode = world::Mode::fine;
    std::vector<std::string> tokens;
    std::vector<Span> gold_segments;
    std::vector<int> gold_landmarks;  // per gold segment, -1 when the template had no landmark
};

enum class Verdict { kept, no_noun, blacklisted };
const char* verdict_name(Verdict v);
Verdict parse_verdict(const std::string& s);

struct NounPhrase {
    Span span;
    std::string text;
    bool operator==(const NounPhrase&) const = default;
};

struct SubInstruction {
    int index = 0;
    Span span;
    std::vector<NounPhrase> noun_phrases;
    int landmark_class = -1;
    Verdict verdict = Verdict::no_noun;
};

// Closed vocabulary: sorted unique words; ids are positions.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::set<std::string> words);
    int id(const std::string& w) const;  // VocabularyError if absent
    bool contains(const std::string& w) const { return index_.count(w) != 0; }
    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    std::vector<int> encode(const std::vector<std::string>& tokens) const;

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct TemplateSet {
    // kind -> templates; kinds: landmark, final, coarse, nonvisual:{straight,left,right,around}
    std::map<std::string, std::vector<std::vector<std::string>>> by_kind;
};
TemplateSet load_templates(const std::string& path);

struct FilterLexicon {
    std::set<std::string> nouns;       // single- or multi-word entries
    std::set<std::string> blacklist;
    std::set<std::string> adverbial;   // subset of blacklist
    std::set<std::string> triggers;
    int max_phrase_words = 1;
};
// Merges library phrases into the noun lexicon; ConfigError if a landmark word is blacklisted.
FilterLexicon load_lexicon(const std::string& path, const world::LandmarkLibrary& lib);
void finalize_lexicon(FilterLexicon& lex);

Vocabulary build_vocabulary(const TemplateSet& t, const world::LandmarkLibrary& lib, const FilterLexicon& lex);

std::vector<std::string> tokenize(const std::string& text);

struct InstructionConfig {
    double p_nonvisual = 0.3;  // chance of a direction-only first step when unambiguous
    double p_then = 0.3;       // chance that a segment is joined with "then" instead of "."
};

Instruction generate_instruction(const world::Episode& ep, const world::World& w, const world::LandmarkLibrary& lib,
                                 const TemplateSet& templates, const Vocabulary& vocab, const InstructionConfig& cfg,
                                 std::uint64_t seed);

// Direction category of a view relative to the heading: 0 straight, 1 left, 2 around, 3 right.
int direction_category(int view, int heading, int K);
const char* direction_name(int category);

std::vector<SubInstruction> segment(const Instruction& ins);
std::vector<NounPhrase> extract_noun_phrases(const std::vector<std::string>& tokens, Span span,
                                             const FilterLexicon& lex);
std::vector<NounPhrase> extract_noun_phrases(const SubInstruction& sub, const std::vector<std::string>& tokens,
                                             const FilterLexicon& lex);
// Sets noun_phrases and verdict on every element; returns the kept ones in order.
std::vector<SubInstruction> filter_sub_instructions(std::vector<SubInstruction>& subs,
                                                    const std::vector<std::string>& tokens, const FilterLexicon& lex);
Verdict judge(const std::vector<NounPhrase>& phrases, const FilterLexicon& lex);

struct CorpusEntry {
    world::Split split = world::Split::train;
    world::Episode episode;
    Instruction instruction;
    std::vector<SubInstruction> subs;  // all segments with verdicts

    std::vector<const SubInstruction*> kept() const;
};

struct CorpusStats {
    double avg_segments = 0.0;
    double avg_kept = 0.0;
    int vocabulary_size = 0;
};
CorpusStats corpus_stats(const std::vector<CorpusEntry>& entries);

struct CorpusConfig {
    int train = 500;
    int val_seen = 100;
    int val_unseen = 100;
    world::Mode mode = world::Mode::fine;
    InstructionConfig instruction;
};

// Samples episodes from the world file (train and val_seen from train worlds,
// val_unseen from val_unseen worlds), writes one instruction each, segments and filters.
std::vector<CorpusEntry> generate_corpus(const world::WorldFile& wf, const TemplateSet& templates,
                                         const FilterLexicon& lex, const Vocabulary& vocab, const CorpusConfig& cfg,
                                         std::uint64_t seed);

void write_corpus(std::ostream& os, const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> read_corpus(std::istream& is);

}  // namespace imnav::instr
