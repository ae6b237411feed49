#include "imnav/instructions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::instr {

namespace {

std::string join(const std::vector<std::string>& t, int start, int end) {
    std::string out;
    for (int i = start; i < end; ++i) {
        if (i > start) out += ' ';
        out += t[i];
    }
    return out;
}

std::vector<std::string> fill(const std::vector<std::string>& tmpl, const std::string& phrase) {
    std::vector<std::string> out;
    for (const auto& w : tmpl) {
        if (w == "{L}") {
            for (auto& p : tokenize(phrase)) out.push_back(p);
        } else {
            out.push_back(w);
        }
    }
    return out;
}

const std::vector<std::vector<std::string>>& kind(const TemplateSet& t, const std::string& k) {
    auto it = t.by_kind.find(k);
    if (it == t.by_kind.end() || it->second.empty()) throw ConfigError("no templates of kind '" + k + "'");
    return it->second;
}

std::string spans_str(const std::vector<Span>& spans) {
    std::string out;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(spans[i].start) + "-" + std::to_string(spans[i].end);
    }
    return out.empty() ? "-" : out;
}

std::vector<Span> parse_spans(const std::string& s, int line) {
    std::vector<Span> out;
    if (s == "-" || s.empty()) return out;
    for (const auto& part : records::split(s, ',')) {
        auto se = records::split(part, '-');
        if (se.size() != 2) throw ParseError("line " + std::to_string(line) + ": bad span '" + part + "'");
        out.push_back({records::to_int(se[0], line), records::to_int(se[1], line)});
    }
    return out;
}

std::string ints_str(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out.empty() ? "-" : out;
}

}  // namespace

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::kept: return "kept";
        case Verdict::no_noun: return "no_noun";
        case Verdict::blacklisted: return "blacklisted";
    }
    return "?";
}

Verdict parse_verdict(const std::string& s) {
    if (s == "kept") return Verdict::kept;
    if (s == "no_noun") return Verdict::no_noun;
    if (s == "blacklisted") return Verdict::blacklisted;
    throw ParseError("unknown verdict '" + s + "'");
}

Vocabulary::Vocabulary(std::set<std::string> words) : words_(words.begin(), words.end()) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
}

int Vocabulary::id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw VocabularyError("word '" + w + "' is not in the vocabulary");
    return it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

TemplateSet load_templates(const std::string& path) {
    TemplateSet t;
    for (const auto& l : records::read_file(path)) {
        records::require_fields(l, 2);
        auto toks = tokenize(l.fields[1]);
        if (toks.empty()) throw ParseError("line " + std::to_string(l.number) + ": empty template");
        t.by_kind[l.fields[0]].push_back(std::move(toks));
    }
    if (t.by_kind.empty()) throw ConfigError("template set is empty");
    return t;
}

void finalize_lexicon(FilterLexicon& lex) {
    lex.max_phrase_words = 1;
    for (const auto& n : lex.nouns)
        lex.max_phrase_words = std::max(lex.max_phrase_words, static_cast<int>(tokenize(n).size()));
}

FilterLexicon load_lexicon(const std::string& path, const world::LandmarkLibrary& lib) {
    FilterLexicon lex;
    for (const auto& l : records::read_file(path)) {
        records::require_fields(l, 2);
        const auto& sec = l.fields[0];
        const auto entry = records::trim(l.fields[1]);
        if (sec == "noun") lex.nouns.insert(entry);
        else if (sec == "blacklist") lex.blacklist.insert(entry);
        else if (sec == "adverbial") lex.adverbial.insert(entry);
        else if (sec == "trigger") lex.triggers.insert(entry);
        else throw ParseError("line " + std::to_string(l.number) + ": unknown lexicon section '" + sec + "'");
    }
    for (const auto& c : lib.classes) {
        lex.nouns.insert(c.phrase);
        for (const auto& w : tokenize(c.phrase))
            if (lex.blacklist.count(w)) throw ConfigError("landmark word '" + w + "' is blacklisted");
    }
    finalize_lexicon(lex);
    return lex;
}

Vocabulary build_vocabulary(const TemplateSet& t, const world::LandmarkLibrary& lib, const FilterLexicon& lex) {
    std::set<std::string> words{".", "then"};
    for (const auto& [k, list] : t.by_kind)
        for (const auto& tmpl : list)
            for (const auto& w : tmpl)
                if (w != "{L}") words.insert(w);
    for (const auto& c : lib.classes)
        for (const auto& w : tokenize(c.phrase)) words.insert(w);
    for (const auto& n : lex.nouns)
        for (const auto& w : tokenize(n)) words.insert(w);
    return Vocabulary(std::move(words));
}

int direction_category(int view, int heading, int K) {
    const int r = ((view - heading) % K + K) % K;
    const double deg = std::fmod(r * 360.0 / K + 45.0, 360.0);
    return static_cast<int>(deg / 90.0);
}

const char* direction_name(int category) {
    static const char* names[] = {"straight", "left", "around", "right"};
    return names[category];
}

Instruction generate_instruction(const world::Episode& ep, const world::World& w, const world::LandmarkLibrary& lib,
                                 const TemplateSet& templates, const Vocabulary& vocab, const InstructionConfig& cfg,
                                 std::uint64_t seed) {
    if (ep.teacher_path.size() < 2) throw ContractError("episode has no path");
    if (templates.by_kind.empty()) throw ContractError("template set is empty");
    Rng rng = make_rng(seed, 0x1257);
    auto pick = [&rng](const std::vector<std::vector<std::string>>& list) -> const std::vector<std::string>& {
        return list[uniform_index(rng, list.size())];
    };
    std::vector<std::vector<std::string>> segs;
    std::vector<int> landmarks;
    if (ep.mode == world::Mode::coarse) {
        if (ep.target_landmark < 0) throw ContractError("coarse episode without a target landmark");
        segs.push_back(fill(pick(kind(templates, "coarse")), lib.at(ep.target_landmark).phrase));
        landmarks.push_back(ep.target_landmark);
    } else {
        int heading = ep.start_heading;
        const int T = ep.edges();
        for (int t = 0; t < T; ++t) {
            const int u = ep.teacher_path[t];
            const int view = w.view_to(u, ep.teacher_path[t + 1]);
            if (view < 0) throw ContractError("teacher path uses a missing edge");
            const int cat = direction_category(view, heading, w.K);
            bool unique = true;
            for (const auto& nv : w.nav[u])
                if (nv.view != view && direction_category(nv.view, heading, w.K) == cat) unique = false;
            const bool nonvisual_draw = uniform01(rng) < cfg.p_nonvisual;
            const int cls = w.placement_at(u, view);
            if ((t == 0 && t < T - 1 && unique && nonvisual_draw) || cls < 0) {
                segs.push_back(pick(kind(templates, std::string("nonvisual:") + direction_name(cat))));
                landmarks.push_back(-1);
            } else {
                segs.push_back(fill(pick(kind(templates, t == T - 1 ? "final" : "landmark")), lib.at(cls).phrase));
                landmarks.push_back(cls);
            }
            heading = view;
        }
    }
    for (std::size_t i = 1; i < segs.size(); ++i) {
        if (uniform01(rng) < cfg.p_then) {
            segs[i].insert(segs[i].begin(), "then");
        } else {
            segs[i - 1].push_back(".");
        }
    }
    segs.back().push_back(".");

    Instruction ins;
    ins.episode_id = ep.id;
    ins.id = ep.id;
    ins.mode = ep.mode;
    ins.gold_landmarks = landmarks;
    for (const auto& s : segs) {
        const int start = static_cast<int>(ins.tokens.size());
        for (const auto& tok : s) {
            vocab.id(tok);
            ins.tokens.push_back(tok);
        }
        ins.gold_segments.push_back({start, static_cast<int>(ins.tokens.size())});
    }
    if (static_cast<int>(ins.tokens.size()) > kMaxTokens) throw ContractError("instruction exceeds 80 tokens");
    return ins;
}

std::vector<SubInstruction> segment(const Instruction& ins) {
    const int n = static_cast<int>(ins.tokens.size());
    if (n == 0) throw ContractError("cannot segment an empty instruction");
    std::vector<Span> spans;
    int start = 0;
    for (int i = 0; i < n; ++i) {
        if (ins.tokens[i] == "then" && i > start) {
            spans.push_back({start, i});
            start = i;
        }
        if (ins.tokens[i] == ".") {
            spans.push_back({start, i + 1});
            start = i + 1;
        }
    }
    if (start < n) spans.push_back({start, n});
    std::vector<SubInstruction> out;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        SubInstruction s;
        s.index = static_cast<int>(i);
        s.span = spans[i];
        if (i < ins.gold_segments.size() && ins.gold_segments[i] == spans[i] && i < ins.gold_landmarks.size())
            s.landmark_class = ins.gold_landmarks[i];
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<NounPhrase> extract_noun_phrases(const std::vector<std::string>& tokens, Span span,
                                             const FilterLexicon& lex) {
    std::vector<NounPhrase> out;
    int i = span.start;
    while (i < span.end) {
        int matched = 0;
        for (int len = std::min(lex.max_phrase_words, span.end - i); len >= 1 && !matched; --len)
            if (lex.nouns.count(join(tokens, i, i + len))) matched = len;
        if (!matched && lex.blacklist.count(tokens[i])) {
            const bool adverbial = lex.adverbial.count(tokens[i]) != 0;
            const bool after_trigger = i > span.start && lex.triggers.count(tokens[i - 1]);
            if (!adverbial || after_trigger) matched = 1;
        }
        if (matched) {
            out.push_back({{i, i + matched}, join(tokens, i, i + matched)});
            i += matched;
        } else {
            ++i;
        }
    }
    return out;
}

std::vector<NounPhrase> extract_noun_phrases(const SubInstruction& sub, const std::vector<std::string>& tokens,
                                             const FilterLexicon& lex) {
    return extract_noun_phrases(tokens, sub.span, lex);
}

Verdict judge(const std::vector<NounPhrase>& phrases, const FilterLexicon& lex) {
    if (phrases.empty()) return Verdict::no_noun;
    for (const auto& p : phrases) {
        const auto words = tokenize(p.text);
        if (!lex.blacklist.count(words.back())) return Verdict::kept;
    }
    return Verdict::blacklisted;
}

std::vector<SubInstruction> filter_sub_instructions(std::vector<SubInstruction>& subs,
                                                    const std::vector<std::string>& tokens, const FilterLexicon& lex) {
    std::vector<SubInstruction> kept;
    for (auto& s : subs) {
        s.noun_phrases = extract_noun_phrases(s, tokens, lex);
        s.verdict = judge(s.noun_phrases, lex);
        if (s.verdict == Verdict::kept) kept.push_back(s);
    }
    return kept;
}

std::vector<const SubInstruction*> CorpusEntry::kept() const {
    std::vector<const SubInstruction*> out;
    for (const auto& s : subs)
        if (s.verdict == Verdict::kept) out.push_back(&s);
    return out;
}

CorpusStats corpus_stats(const std::vector<CorpusEntry>& entries) {
    if (entries.empty()) throw InputError("corpus_stats on an empty dataset");
    long segs = 0, kept = 0;
    std::set<std::string> types;
    for (const auto& e : entries) {
        segs += static_cast<long>(e.subs.size());
        kept += static_cast<long>(e.kept().size());
        types.insert(e.instruction.tokens.begin(), e.instruction.tokens.end());
    }
    const double n = static_cast<double>(entries.size());
    return {static_cast<double>(segs) / n, static_cast<double>(kept) / n, static_cast<int>(types.size())};
}

std::vector<CorpusEntry> generate_corpus(const world::WorldFile& wf, const TemplateSet& templates,
                                         const FilterLexicon& lex, const Vocabulary& vocab, const CorpusConfig& cfg,
                                         std::uint64_t seed) {
    std::vector<const world::World*> seen, unseen;
    for (const auto& w : wf.worlds) (w.split == world::Split::val_unseen ? unseen : seen).push_back(&w);
    std::vector<CorpusEntry> out;
    Rng rng = make_rng(seed, 0xc0);
    std::map<int, std::vector<std::pair<int, int>>> pairs;
    int next_id = 0;
    auto emit = [&](world::Split split, int count, const std::vector<const world::World*>& pool) {
        if (count > 0 && pool.empty())
            throw ConfigError(std::string("no worlds available for split ") + world::split_name(split));
        for (int i = 0; i < count; ++i) {
            const world::World& w = *pool[uniform_index(rng, pool.size())];
            auto it = pairs.find(w.id);
            if (it == pairs.end()) it = pairs.emplace(w.id, world::episode_pairs(w, cfg.mode)).first;
            const int id = next_id++;
            CorpusEntry e;
            e.split = split;
            e.episode = world::sample_episode(w, cfg.mode, derive_seed(seed, 2 * id + 1), it->second);
            e.episode.id = id;
            e.instruction = generate_instruction(e.episode, w, wf.library, templates, vocab, cfg.instruction,
                                                 derive_seed(seed, 2 * id + 2));
            e.subs = segment(e.instruction);
            filter_sub_instructions(e.subs, e.instruction.tokens, lex);
            out.push_back(std::move(e));
        }
    };
    emit(world::Split::train, cfg.train, seen);
    emit(world::Split::val_seen, cfg.val_seen, seen);
    emit(world::Split::val_unseen, cfg.val_unseen, unseen);
    return out;
}

void write_corpus(std::ostream& os, const std::vector<CorpusEntry>& entries) {
    os << "FORMAT\timnav-corpus\t1\n";
    for (const auto& e : entries) {
        world::write_episode(os, e.episode);
        const auto& ins = e.instruction;
        os << "INSTR\t" << ins.id << "\t" << ins.episode_id << "\t" << world::split_name(e.split) << "\t"
           << world::mode_name(ins.mode) << "\t" << join(ins.tokens, 0, static_cast<int>(ins.tokens.size())) << "\t"
           << spans_str(ins.gold_segments) << "\t" << ints_str(ins.gold_landmarks) << "\n";
        for (const auto& s : e.subs) {
            std::vector<Span> ph;
            for (const auto& p : s.noun_phrases) ph.push_back(p.span);
            os << "SUB\t" << ins.id << "\t" << s.index << "\t" << s.span.start << "\t" << s.span.end << "\t"
               << verdict_name(s.verdict) << "\t" << s.landmark_class << "\t" << spans_str(ph) << "\n";
        }
    }
}

std::vector<CorpusEntry> read_corpus(std::istream& is) {
    const auto lines = records::read_lines(is);
    if (lines.empty() || lines[0].fields.size() < 3 || lines[0].fields[0] != "FORMAT" ||
        lines[0].fields[1] != "imnav-corpus")
        throw FormatError("not a corpus file");
    if (lines[0].fields[2] != "1") throw FormatError("unsupported corpus version " + lines[0].fields[2]);
    std::vector<CorpusEntry> out;
    std::map<int, world::Episode> episodes;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& l = lines[i];
        const int ln = l.number;
        const auto& tag = l.fields[0];
        if (tag == "EPISODE") {
            auto ep = world::parse_episode(l);
            episodes[ep.id] = ep;
        } else if (tag == "INSTR") {
            records::require_fields(l, 8);
            CorpusEntry e;
            auto& ins = e.instruction;
            ins.id = records::to_int(l.fields[1], ln);
            ins.episode_id = records::to_int(l.fields[2], ln);
            e.split = world::parse_split(l.fields[3]);
            ins.mode = world::parse_mode(l.fields[4]);
            ins.tokens = tokenize(l.fields[5]);
            ins.gold_segments = parse_spans(l.fields[6], ln);
            ins.gold_landmarks = records::to_ints(l.fields[7], ln);
            auto it = episodes.find(ins.episode_id);
            if (it == episodes.end()) throw FormatError("line " + std::to_string(ln) + ": instruction before its episode");
            e.episode = it->second;
            out.push_back(std::move(e));
        } else if (tag == "SUB") {
            records::require_fields(l, 8);
            if (out.empty() || out.back().instruction.id != records::to_int(l.fields[1], ln))
                throw FormatError("line " + std::to_string(ln) + ": sub-instruction out of place");
            auto& e = out.back();
            SubInstruction s;
            s.index = records::to_int(l.fields[2], ln);
            s.span = {records::to_int(l.fields[3], ln), records::to_int(l.fields[4], ln)};
            s.verdict = parse_verdict(l.fields[5]);
            s.landmark_class = records::to_int(l.fields[6], ln);
            const int n = static_cast<int>(e.instruction.tokens.size());
            if (s.span.start < 0 || s.span.end > n || s.span.start >= s.span.end)
                throw FormatError("line " + std::to_string(ln) + ": span out of range");
            for (auto sp : parse_spans(l.fields[7], ln)) {
                if (sp.start < s.span.start || sp.end > s.span.end || sp.start >= sp.end)
                    throw FormatError("line " + std::to_string(ln) + ": phrase out of range");
                s.noun_phrases.push_back({sp, join(e.instruction.tokens, sp.start, sp.end)});
            }
            e.subs.push_back(std::move(s));
        } else {
            throw FormatError("line " + std::to_string(ln) + ": unknown record '" + tag + "'");
        }
    }
    return out;
}

}  // namespace imnav::instr
