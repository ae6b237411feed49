#include "imnav/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::harness {

Ini Ini::parse(std::istream& is) {
    Ini ini;
    std::string line, section;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        line = records::trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("line " + std::to_string(n) + ": unterminated section header");
            section = records::trim(line.substr(1, line.size() - 2));
            ini.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("line " + std::to_string(n) + ": expected key=value");
        const std::string key = records::trim(line.substr(0, eq));
        if (key.empty()) throw ParseError("line " + std::to_string(n) + ": empty key");
        ini.sections_[section][key] = records::trim(line.substr(eq + 1));
    }
    return ini;
}

Ini Ini::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse(in);
}

bool Ini::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) != 0;
}

std::string Ini::get(const std::string& section, const std::string& key, const std::string& fallback) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return fallback;
    auto kv = it->second.find(key);
    return kv == it->second.end() ? fallback : kv->second;
}

std::string Ini::section_text(const std::string& section) const {
    std::string out;
    auto it = sections_.find(section);
    if (it == sections_.end()) return out;
    for (const auto& [k, v] : it->second) out += k + "=" + v + "\n";
    return out;
}

namespace {

const std::vector<std::pair<Condition, const char*>> kConditions{
    {Condition::baseline, "baseline"},
    {Condition::imagine, "imagine"},
    {Condition::null_test, "null_test"},
    {Condition::wrong_test, "wrong_test"},
    {Condition::goal_only, "goal_only"},
    {Condition::text_only, "text_only"},
    {Condition::no_aux, "no_aux"},
    {Condition::infonce, "infonce"},
    {Condition::transformer_encoder, "transformer_encoder"},
    {Condition::visual_concat, "visual_concat"},
    {Condition::late_fusion, "late_fusion"},
};

}  // namespace

const char* condition_name(Condition c) {
    for (const auto& [k, n] : kConditions)
        if (k == c) return n;
    return "?";
}

Condition parse_condition(const std::string& s) {
    for (const auto& [k, n] : kConditions)
        if (s == n) return k;
    throw ConfigError("unknown condition '" + s + "'");
}

bool is_test_condition(Condition c) {
    return c == Condition::null_test || c == Condition::wrong_test || c == Condition::goal_only;
}

void ExperimentSpec::validate() const {
    if (name.empty()) throw ConfigError("experiment name is empty");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (conditions.empty()) throw ConfigError("experiment needs at least one condition");
    if (splits.empty()) throw ConfigError("experiment needs at least one split");
    if (train_worlds <= 0) throw ConfigError("train_worlds must be positive");
    if (unseen_worlds < 0) throw ConfigError("unseen_worlds must be non-negative");
    for (auto s : splits)
        if (s == world::Split::val_unseen && unseen_worlds == 0)
            throw ConfigError("val_unseen evaluation needs unseen worlds");
    std::set<Condition> have(conditions.begin(), conditions.end());
    if (have.size() != conditions.size()) throw ConfigError("duplicate condition in the ablation matrix");
    bool tests = false;
    for (auto c : conditions) tests = tests || is_test_condition(c);
    if (tests && (!have.count(Condition::baseline) || !have.count(Condition::imagine)))
        throw ConfigError("test-time conditions need baseline and imagine in the matrix");
    imagination.validate();
    pretrain.validate();
    finetune.validate();
    agent::AgentConfig a = agent;
    a.vocab = std::max(a.vocab, 1);
    a.validate();
}

namespace {

std::vector<std::string> list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& p : records::split(s, ',')) {
        auto t = records::trim(p);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

void known_keys(const Ini& ini, const std::string& section, const std::set<std::string>& keys) {
    if (!ini.has_section(section)) return;
    for (const auto& [k, v] : ini.sections().at(section))
        if (!keys.count(k)) throw ConfigError("unknown key '" + k + "' in [" + section + "]");
}

int ini_int(const Ini& ini, const std::string& s, const std::string& k, int fallback) {
    return ini.has(s, k) ? records::to_int(ini.get(s, k, ""), 0) : fallback;
}

double ini_double(const Ini& ini, const std::string& s, const std::string& k, double fallback) {
    return ini.has(s, k) ? records::to_double(ini.get(s, k, ""), 0) : fallback;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_ini(const Ini& ini) {
    static const std::set<std::string> sections{"experiment", "library", "world", "corpus", "imagination",
                                                "agent",      "pretrain", "finetune"};
    for (const auto& [name, kv] : ini.sections())
        if (!sections.count(name)) throw ConfigError("unknown section [" + name + "]");
    ExperimentSpec s;
    // Baseline defaults: pretrain schedule without imaginations.
    s.pretrain.schedule = train::Schedule::pretrain;
    s.pretrain.imaginations = false;
    s.pretrain.aux = train::AuxLoss::none;

    known_keys(ini, "experiment",
               {"name", "seeds", "conditions", "splits", "train_worlds", "unseen_worlds", "library_seed"});
    s.name = ini.get("experiment", "name", s.name);
    if (ini.has("experiment", "seeds")) {
        s.seeds.clear();
        for (const auto& v : list(ini.get("experiment", "seeds", ""))) s.seeds.push_back(records::to_u64(v, 0));
    }
    if (ini.has("experiment", "conditions")) {
        s.conditions.clear();
        for (const auto& v : list(ini.get("experiment", "conditions", ""))) s.conditions.push_back(parse_condition(v));
    }
    if (ini.has("experiment", "splits")) {
        s.splits.clear();
        for (const auto& v : list(ini.get("experiment", "splits", ""))) {
            auto sp = world::parse_split(v);
            if (sp == world::Split::train) throw ConfigError("evaluation on the train split is not supported");
            s.splits.push_back(sp);
        }
    }
    s.train_worlds = ini_int(ini, "experiment", "train_worlds", s.train_worlds);
    s.unseen_worlds = ini_int(ini, "experiment", "unseen_worlds", s.unseen_worlds);
    if (ini.has("experiment", "library_seed")) s.library_seed = records::to_u64(ini.get("experiment", "library_seed", ""), 0);

    known_keys(ini, "library", {"d_v", "held_out_fraction", "max_abs_cos"});
    s.library.d_v = ini_int(ini, "library", "d_v", s.library.d_v);
    s.library.held_out_fraction = ini_double(ini, "library", "held_out_fraction", s.library.held_out_fraction);
    s.library.max_abs_cos = ini_double(ini, "library", "max_abs_cos", s.library.max_abs_cos);

    known_keys(ini, "world",
               {"nodes", "topology", "spacing", "jitter", "extra_edge_prob", "max_degree", "K", "sigma_obs",
                "landmark_density"});
    auto& w = s.world;
    w.nodes = ini_int(ini, "world", "nodes", w.nodes);
    if (ini.has("world", "topology")) {
        const auto t = ini.get("world", "topology", "");
        if (t != "grid" && t != "ring") throw ConfigError("unknown topology '" + t + "'");
        w.topology = t == "grid" ? world::Topology::grid : world::Topology::ring;
    }
    w.spacing = ini_double(ini, "world", "spacing", w.spacing);
    w.jitter = ini_double(ini, "world", "jitter", w.jitter);
    w.extra_edge_prob = ini_double(ini, "world", "extra_edge_prob", w.extra_edge_prob);
    w.max_degree = ini_int(ini, "world", "max_degree", w.max_degree);
    w.K = ini_int(ini, "world", "K", w.K);
    w.sigma_obs = ini_double(ini, "world", "sigma_obs", w.sigma_obs);
    w.landmark_density = ini_double(ini, "world", "landmark_density", w.landmark_density);

    known_keys(ini, "corpus", {"train", "val_seen", "val_unseen", "mode", "p_nonvisual", "p_then"});
    auto& c = s.corpus;
    c.train = ini_int(ini, "corpus", "train", c.train);
    c.val_seen = ini_int(ini, "corpus", "val_seen", c.val_seen);
    c.val_unseen = ini_int(ini, "corpus", "val_unseen", c.val_unseen);
    if (ini.has("corpus", "mode")) c.mode = world::parse_mode(ini.get("corpus", "mode", ""));
    c.instruction.p_nonvisual = ini_double(ini, "corpus", "p_nonvisual", c.instruction.p_nonvisual);
    c.instruction.p_then = ini_double(ini, "corpus", "p_then", c.instruction.p_then);

    known_keys(ini, "imagination", {"sigma_gen", "fidelity"});
    s.imagination.sigma_gen = ini_double(ini, "imagination", "sigma_gen", s.imagination.sigma_gen);
    s.imagination.fidelity = ini_double(ini, "imagination", "fidelity", s.imagination.fidelity);

    // Section texts go through the owning modules' parsers on top of the defaults.
    auto merge_agent = [&](agent::AgentConfig base) {
        std::string text = base.to_text() + ini.section_text("agent");
        return agent::AgentConfig::parse(text);
    };
    s.agent = merge_agent(s.agent);
    s.agent.K = s.world.K;
    s.agent.d_v = s.library.d_v;
    s.pretrain = train::TrainConfig::parse(s.pretrain.to_text() + ini.section_text("pretrain"));
    s.finetune = train::TrainConfig::parse(s.finetune.to_text() + ini.section_text("finetune"));
    s.validate();
    return s;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) { return from_ini(Ini::load(path)); }

Assets load_assets(const std::string& data_dir, const world::LibraryConfig& cfg, std::uint64_t library_seed) {
    return assets_for(data_dir,
                      world::generate_library(world::load_phrases(data_dir + "/landmarks.txt"), cfg, library_seed));
}

Assets assets_for(const std::string& data_dir, const world::LandmarkLibrary& library) {
    Assets a;
    a.library = library;
    a.templates = instr::load_templates(data_dir + "/templates.txt");
    a.lexicon = instr::load_lexicon(data_dir + "/lexicon.txt", a.library);
    a.vocab = instr::build_vocabulary(a.templates, a.library, a.lexicon);
    return a;
}

world::WorldFile make_worlds(const ExperimentSpec& spec, const world::LandmarkLibrary& lib, std::uint64_t seed) {
    world::WorldFile f;
    f.library = lib;
    const int n = spec.train_worlds + spec.unseen_worlds;
    for (int i = 0; i < n; ++i) {
        const auto split = i < spec.train_worlds ? world::Split::train : world::Split::val_unseen;
        f.worlds.push_back(world::generate_world(spec.world, lib, split, derive_seed(seed, static_cast<std::uint64_t>(i))));
        f.worlds.back().id = i;
    }
    return f;
}

data::Dataset make_dataset(const ExperimentSpec& spec, const Assets& assets, std::uint64_t seed) {
    data::Dataset ds;
    ds.worlds = make_worlds(spec, assets.library, seed);
    ds.corpus = instr::generate_corpus(ds.worlds, assets.templates, assets.lexicon, assets.vocab, spec.corpus, seed);
    ds.imaginations = imag::imagine_dataset(ds.corpus, assets.library, spec.imagination, seed);
    ds.vocab = assets.vocab;
    return ds;
}

agent::AgentConfig condition_agent(const ExperimentSpec& spec, const Assets& assets, Condition c) {
    agent::AgentConfig a = spec.agent;
    a.vocab = assets.vocab.size();
    a.d_v = assets.library.d_v;
    a.K = spec.world.K;
    switch (c) {
        case Condition::text_only: a.text_only = true; break;
        case Condition::transformer_encoder: a.imagination_encoder = agent::ImaginationEncoder::transformer; break;
        case Condition::visual_concat: a.concat_target = agent::ConcatTarget::visual; break;
        case Condition::late_fusion: a.fusion = agent::Fusion::late; break;
        default: break;
    }
    a.validate();
    return a;
}

train::TrainConfig condition_train(const ExperimentSpec& spec, Condition c, std::uint64_t seed) {
    train::TrainConfig t = c == Condition::baseline ? spec.pretrain : spec.finetune;
    if (c == Condition::baseline) {
        t.imaginations = false;
        t.aux = train::AuxLoss::none;
    }
    if (c == Condition::no_aux) t.aux = train::AuxLoss::none;
    if (c == Condition::infonce) t.aux = train::AuxLoss::infonce;
    // Text embeddings stand in for imaginations; there is nothing to align.
    if (c == Condition::text_only) t.aux = train::AuxLoss::none;
    t.seed = seed;
    t.validate();
    return t;
}

data::Policy condition_policy(Condition c) {
    switch (c) {
        case Condition::baseline: return data::Policy::none;
        case Condition::null_test: return data::Policy::null;
        case Condition::wrong_test: return data::Policy::wrong;
        case Condition::goal_only: return data::Policy::goal_only;
        default: return data::Policy::correct;
    }
}

void transplant(const agent::Agent& from, agent::Agent& to) {
    for (auto& e : to.params().entries()) {
        if (!from.params().contains(e.name)) continue;
        const auto& src = from.params().get(e.name);
        if (src.rows() != e.tensor.rows() || src.cols() != e.tensor.cols())
            throw ShapeError("parameter " + e.name + " changes shape between configurations");
        e.tensor.values() = src.values();
    }
}

agent::Agent initial_agent(const ExperimentSpec& spec, const Assets& assets, Condition c,
                           const agent::Agent* baseline, std::uint64_t seed) {
    agent::Agent a(condition_agent(spec, assets, c), derive_seed(seed, 0xa6e));
    if (c == Condition::baseline) return a;
    if (!baseline) throw ContractError(std::string("condition ") + condition_name(c) + " needs the baseline checkpoint");
    transplant(*baseline, a);
    a.init_imagination_from_observation();
    return a;
}

std::vector<const instr::CorpusEntry*> multi_landmark(const data::Dataset& ds,
                                                      const std::vector<const instr::CorpusEntry*>& entries) {
    std::vector<const instr::CorpusEntry*> out;
    for (const auto* e : entries) {
        auto it = ds.imaginations.find(e->instruction.id);
        if (it != ds.imaginations.end() && it->second.size() >= 2) out.push_back(e);
    }
    return out;
}

std::string multi_split_name(world::Split s) { return std::string(world::split_name(s)) + "_multi"; }

namespace {

void say(const RunOptions& o, const std::string& msg) {
    if (o.log) *o.log << msg << std::endl;
}

std::string seed_dir(const RunOptions& o, std::uint64_t seed) {
    if (o.out_dir.empty()) return {};
    std::string d = o.out_dir + "/seed_" + std::to_string(seed);
    std::filesystem::create_directories(d);
    return d;
}

template <typename Fn>
void write_artifact(const std::string& path, const RunOptions& o, std::uint64_t seed, Fn fn) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path + "'");
    records::write_header(os, {o.command, seed});
    fn(os);
    if (!os) throw IoError("failed writing '" + path + "'");
}

// Which checkpoint a condition is evaluated with.
Condition checkpoint_of(Condition c) { return is_test_condition(c) ? Condition::imagine : c; }

}  // namespace

std::vector<eval::MetricsRecord> run_ablation(const ExperimentSpec& spec, const Assets& assets, const RunOptions& opts) {
    spec.validate();
    std::vector<eval::MetricsRecord> rows;
    std::vector<Condition> trained;
    for (auto c : spec.conditions) {
        const Condition k = checkpoint_of(c);
        if (std::find(trained.begin(), trained.end(), k) == trained.end()) trained.push_back(k);
    }
    // The baseline is always trained first: every other checkpoint starts from it.
    if (std::find(trained.begin(), trained.end(), Condition::baseline) == trained.end())
        trained.insert(trained.begin(), Condition::baseline);
    std::stable_partition(trained.begin(), trained.end(), [](Condition c) { return c == Condition::baseline; });

    for (auto seed : spec.seeds) {
        const std::string dir = seed_dir(opts, seed);
        const data::Dataset ds = make_dataset(spec, assets, seed);
        if (!dir.empty()) {
            write_artifact(dir + "/worlds.txt", opts, seed, [&](std::ostream& os) { world::write_world_file(os, ds.worlds); });
            write_artifact(dir + "/corpus.txt", opts, seed, [&](std::ostream& os) { instr::write_corpus(os, ds.corpus); });
            write_artifact(dir + "/imaginations.txt", opts, seed,
                           [&](std::ostream& os) { imag::write_imaginations(os, ds.imaginations); });
        }
        std::map<Condition, agent::Agent> agents;
        for (auto c : trained) {
            try {
                const agent::Agent* base = c == Condition::baseline ? nullptr : &agents.at(Condition::baseline);
                train::TrainState st = train::init_state(initial_agent(spec, assets, c, base, seed), condition_train(spec, c, seed));
                st.command = opts.command;
                say(opts, "seed " + std::to_string(seed) + ": training " + condition_name(c) + " for " +
                              std::to_string(st.cfg.iterations) + " iterations");
                train::train(st, ds);
                if (!dir.empty()) {
                    train::save_checkpoint(st, dir + "/" + condition_name(c) + ".ckpt");
                    write_artifact(dir + "/" + condition_name(c) + ".curve.tsv", opts, seed,
                                   [&](std::ostream& os) { train::write_curve(os, st.curve); });
                }
                agents.emplace(c, std::move(st.agent));
            } catch (const Error& e) {
                throw Error(std::string("condition ") + condition_name(c) + ", seed " + std::to_string(seed) + ": " + e.what());
            }
        }
        for (auto c : spec.conditions) {
            const agent::Agent& a = agents.at(checkpoint_of(c));
            eval::AgentNavigator nav(a);
            for (auto split : spec.splits) {
                try {
                    const auto entries = ds.split(split);
                    if (entries.empty()) throw InputError(std::string("split ") + world::split_name(split) + " is empty");
                    auto m = eval::aggregate(eval::run_episodes(nav, ds, entries, condition_policy(c), seed),
                                             world::split_name(split), condition_name(c), seed);
                    rows.push_back(m);
                    const auto multi = multi_landmark(ds, entries);
                    if (!multi.empty())
                        rows.push_back(eval::aggregate(eval::run_episodes(nav, ds, multi, condition_policy(c), seed),
                                                       multi_split_name(split), condition_name(c), seed));
                    char buf[160];
                    std::snprintf(buf, sizeof buf, "seed %llu: %s on %s SR %.2f SPL %.2f",
                                  static_cast<unsigned long long>(seed), condition_name(c), world::split_name(split),
                                  100.0 * m.sr, 100.0 * m.spl);
                    say(opts, buf);
                } catch (const Error& e) {
                    throw Error(std::string("condition ") + condition_name(c) + ", seed " + std::to_string(seed) + ": " +
                                e.what());
                }
            }
        }
    }
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        const std::uint64_t first = spec.seeds.front();
        write_artifact(opts.out_dir + "/metrics.tsv", opts, first,
                       [&](std::ostream& os) { eval::write_metrics_tsv(os, rows); });
        const auto sum = summarize(rows);
        write_artifact(opts.out_dir + "/summary.tsv", opts, first, [&](std::ostream& os) { write_summary_tsv(os, sum); });
        write_artifact(opts.out_dir + "/summary.txt", opts, first, [&](std::ostream& os) {
            write_summary_table(os, sum);
            for (const auto& v : verdicts(sum)) os << format_verdict(v) << "\n";
        });
    }
    return rows;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) throw InputError("mean of an empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_stdev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<Summary> summarize(const std::vector<eval::MetricsRecord>& rows) {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.policy, r.split);
        if (!groups.count(key)) order.push_back(key);
        groups[key].first.push_back(100.0 * r.sr);
        groups[key].second.push_back(100.0 * r.spl);
    }
    std::vector<Summary> out;
    for (const auto& key : order) {
        const auto& [sr, spl] = groups.at(key);
        Summary s;
        s.condition = key.first;
        s.split = key.second;
        s.runs = static_cast<int>(sr.size());
        s.sr_mean = mean(sr);
        s.sr_sd = sample_stdev(sr);
        s.spl_mean = mean(spl);
        s.spl_sd = sample_stdev(spl);
        out.push_back(s);
    }
    return out;
}

namespace {

std::string f2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string f3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

void write_summary_tsv(std::ostream& os, const std::vector<Summary>& s) {
    os << "condition\tsplit\truns\tSR_mean\tSR_sd\tSPL_mean\tSPL_sd\n";
    for (const auto& r : s)
        os << r.condition << "\t" << r.split << "\t" << r.runs << "\t" << f2(r.sr_mean) << "\t" << f3(r.sr_sd) << "\t"
           << f2(r.spl_mean) << "\t" << f3(r.spl_sd) << "\n";
}

void write_summary_table(std::ostream& os, const std::vector<Summary>& s) {
    std::vector<std::vector<std::string>> all{{"condition", "split", "runs", "SR", "SPL"}};
    for (const auto& r : s)
        all.push_back({r.condition, r.split, std::to_string(r.runs), f2(r.sr_mean) + " ± " + f3(r.sr_sd),
                       f2(r.spl_mean) + " ± " + f3(r.spl_sd)});
    std::vector<std::size_t> width(5, 0);
    for (const auto& r : all)
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    for (const auto& r : all) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) os << "  ";
            os << (i < 2 ? std::left : std::right) << std::setw(static_cast<int>(width[i])) << r[i];
        }
        os << "\n";
    }
    os << std::right;
}

const Summary* find_summary(const std::vector<Summary>& s, const std::string& condition, const std::string& split) {
    for (const auto& r : s)
        if (r.condition == condition && r.split == split) return &r;
    return nullptr;
}

std::vector<Verdict> verdicts(const std::vector<Summary>& s, world::Split split) {
    const std::string sp = world::split_name(split);
    const std::string multi = multi_split_name(split);
    std::vector<Verdict> out;
    // Adds "a op b" when both sides exist; delta is a - b in SR points.
    auto add = [&](const std::string& name, const std::string& a, const std::string& b, const std::string& on,
                   auto test) {
        const Summary* x = find_summary(s, a, on);
        const Summary* y = find_summary(s, b, on);
        if (!x || !y) return;
        Verdict v;
        v.hypothesis = name;
        v.delta = x->sr_mean - y->sr_mean;
        v.pass = test(v.delta);
        out.push_back(v);
    };
    add("imagine>baseline", "imagine", "baseline", sp, [](double d) { return d >= 5.0; });
    add("correct>=null", "imagine", "null_test", sp, [](double d) { return d >= 0.0; });
    add("correct>wrong", "imagine", "wrong_test", sp, [](double d) { return d >= 3.0; });
    add("sequential>goal_only", "imagine", "goal_only", multi, [](double d) { return d >= 2.0; });
    add("goal_only>=baseline", "goal_only", "baseline", sp, [](double d) { return d >= 0.0; });
    add("cosine>=no_aux", "imagine", "no_aux", sp, [](double d) { return d >= 0.0; });
    add("infonce~cosine", "infonce", "imagine", sp, [](double d) { return std::fabs(d) <= 2.0; });
    return out;
}

std::string format_verdict(const Verdict& v) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "hypothesis %s: %s (Δ=%+.1f SR)", v.hypothesis.c_str(), v.pass ? "PASS" : "FAIL",
                  v.delta);
    return buf;
}

}  // namespace imnav::harness
