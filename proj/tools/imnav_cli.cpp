#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "imnav/errors.hpp"
#include "imnav/harness.hpp"
#include "imnav/records.hpp"

using namespace imnav;

namespace {

std::string command_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

// Writes through a temporary file so a failed run never leaves a partial artifact.
template <typename Fn>
void write_out(const std::string& path, const std::string& cmd, std::uint64_t seed, Fn fn) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw IoError("cannot write '" + path + "'");
        records::write_header(os, {cmd, seed});
        fn(os);
        if (!os) throw IoError("failed writing '" + path + "'");
    }
    std::filesystem::rename(tmp, path);
}

harness::ExperimentSpec spec_from(const std::string& path) {
    return path.empty() ? harness::ExperimentSpec{} : harness::ExperimentSpec::load(path);
}

world::WorldFile read_worlds(const std::string& path) {
    auto in = open_in(path);
    return world::read_world_file(in);
}

std::vector<instr::CorpusEntry> read_corpus(const std::string& path) {
    auto in = open_in(path);
    return instr::read_corpus(in);
}

data::Dataset load_dataset(const std::string& data_dir, const std::string& worlds, const std::string& corpus,
                           const std::string& imaginations, harness::Assets* assets_out = nullptr) {
    data::Dataset ds;
    ds.worlds = read_worlds(worlds);
    ds.corpus = read_corpus(corpus);
    auto in = open_in(imaginations);
    ds.imaginations = imag::read_imaginations(in, ds.corpus);
    auto assets = harness::assets_for(data_dir, ds.worlds.library);
    ds.vocab = assets.vocab;
    if (assets_out) *assets_out = std::move(assets);
    return ds;
}

struct Common {
    std::string data_dir = IMNAV_DATA_DIR;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string worlds, corpus, imaginations;
};

void add_inputs(CLI::App* app, Common& c) {
    app->add_option("--worlds", c.worlds, "World file")->required();
    app->add_option("--corpus", c.corpus, "Corpus file")->required();
    app->add_option("--imaginations", c.imaginations, "Imagination file")->required();
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cmd = command_line(argc, argv);
    CLI::App app{"imnav: landmark imagination for instruction-following navigation"};
    app.require_subcommand(1);
    Common c;
    app.add_option("--data", c.data_dir, "Directory with landmarks.txt, templates.txt and lexicon.txt");

    auto* gw = app.add_subcommand("gen-world", "Generate the landmark library and worlds");
    gw->add_option("--seed", c.seed, "Generation seed")->required();
    gw->add_option("--out", c.out, "Output world file")->required();
    gw->add_option("--config", c.config, "Experiment config (world and library sections)");

    auto* gc = app.add_subcommand("gen-corpus", "Sample episodes and write segmented, filtered instructions");
    gc->add_option("--seed", c.seed, "Generation seed")->required();
    gc->add_option("--worlds", c.worlds, "World file")->required();
    gc->add_option("--out", c.out, "Output corpus file")->required();
    gc->add_option("--config", c.config, "Experiment config (corpus section)");

    auto* im = app.add_subcommand("imagine", "Generate one imagination per kept sub-instruction");
    im->add_option("--seed", c.seed, "Generation seed")->required();
    im->add_option("--worlds", c.worlds, "World file")->required();
    im->add_option("--corpus", c.corpus, "Corpus file")->required();
    im->add_option("--out", c.out, "Output imagination file")->required();
    im->add_option("--config", c.config, "Experiment config (imagination section)");

    std::string condition = "baseline", init, resume, curve;
    int iterations = 0;
    auto* tr = app.add_subcommand("train", "Train the baseline or finetune a condition from it");
    tr->add_option("--seed", c.seed, "Training seed")->required();
    add_inputs(tr, c);
    tr->add_option("--config", c.config, "Experiment config (agent, pretrain and finetune sections)");
    tr->add_option("--condition", condition, "baseline, imagine, no_aux, infonce, text_only, ...");
    tr->add_option("--init", init, "Baseline checkpoint to finetune from");
    tr->add_option("--resume", resume, "Continue an interrupted run from this checkpoint");
    tr->add_option("--iterations", iterations, "Stop after this many iterations (default: the configured total)");
    tr->add_option("--out", c.out, "Output checkpoint")->required();
    tr->add_option("--curve", curve, "Also write the training curve here");

    std::string checkpoint, split = "val_unseen", policy = "correct", label;
    bool multi = false, table = false;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split under one imagination policy");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    add_inputs(ev, c);
    ev->add_option("--seed", c.seed, "Evaluation seed")->required();
    ev->add_option("--split", split, "val_seen or val_unseen");
    ev->add_option("--policy", policy, "correct, null, wrong, goal_only or none");
    ev->add_option("--label", label, "Value of the policy column (default: the policy)");
    ev->add_flag("--multi", multi, "Only episodes with at least two imaginations");
    ev->add_flag("--table", table, "Print an aligned table instead of TSV");
    ev->add_option("--out", c.out, "Output metrics file (default: stdout)");

    std::string spec_path;
    std::vector<std::uint64_t> seeds;
    bool quiet = false;
    auto* ab = app.add_subcommand("ablate", "Run an ablation matrix over seeds and summarize it");
    ab->add_option("--spec", spec_path, "Experiment config")->required();
    ab->add_option("--out", c.out, "Output directory")->required();
    ab->add_option("--seeds", seeds, "Override the configured seeds");
    ab->add_flag("--quiet", quiet, "No progress lines");

    int episode = -1, layer = 0, head = 0, imagination = 0, k = 3;
    auto* pa = app.add_subcommand("probe-attention", "Rank text keys and views attended by one imagination");
    pa->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    add_inputs(pa, c);
    pa->add_option("--episode", episode, "Episode id")->required();
    pa->add_option("--layer", layer, "Cross-modal layer");
    pa->add_option("--head", head, "Attention head");
    pa->add_option("--imagination", imagination, "Imagination index within the instruction");
    pa->add_option("--k", k, "How many ranked entries to print");
    pa->add_option("--seed", c.seed, "Rollout seed");

    std::vector<std::string> metrics_files;
    auto* rp = app.add_subcommand("report", "Merge metrics files into per-condition means and verdicts");
    rp->add_option("files", metrics_files, "Metrics TSV files")->required();
    rp->add_option("--out", c.out, "Output prefix: writes <out>.metrics.tsv, <out>.summary.tsv and <out>.summary.txt");
    rp->add_option("--split", split, "Split used for the verdict lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gw) {
            const auto spec = spec_from(c.config);
            const auto lib = world::generate_library(world::load_phrases(c.data_dir + "/landmarks.txt"), spec.library,
                                                     spec.library_seed);
            const auto wf = harness::make_worlds(spec, lib, c.seed);
            write_out(c.out, cmd, c.seed, [&](std::ostream& os) { world::write_world_file(os, wf); });
        } else if (*gc) {
            const auto spec = spec_from(c.config);
            const auto wf = read_worlds(c.worlds);
            const auto a = harness::assets_for(c.data_dir, wf.library);
            const auto corpus = instr::generate_corpus(wf, a.templates, a.lexicon, a.vocab, spec.corpus, c.seed);
            write_out(c.out, cmd, c.seed, [&](std::ostream& os) { instr::write_corpus(os, corpus); });
            const auto st = instr::corpus_stats(corpus);
            std::printf("%zu instructions, %.2f segments and %.2f kept per instruction, vocabulary %d\n", corpus.size(),
                        st.avg_segments, st.avg_kept, st.vocabulary_size);
        } else if (*im) {
            const auto spec = spec_from(c.config);
            const auto wf = read_worlds(c.worlds);
            const auto corpus = read_corpus(c.corpus);
            const auto set = imag::imagine_dataset(corpus, wf.library, spec.imagination, c.seed);
            write_out(c.out, cmd, c.seed, [&](std::ostream& os) { imag::write_imaginations(os, set); });
            const auto f = imag::fidelity_check(set, wf.library);
            std::printf("%d imaginations for %d instructions; detected %.2f%%, all detected %.2f%%\n", f.imaginations,
                        f.instructions, 100.0 * f.frac_detected, 100.0 * f.frac_all_detected);
        } else if (*tr) {
            harness::Assets assets;
            const auto ds = load_dataset(c.data_dir, c.worlds, c.corpus, c.imaginations, &assets);
            const auto spec = spec_from(c.config);
            train::TrainState st;
            if (!resume.empty()) {
                st = train::load_checkpoint(resume);
            } else {
                const auto cond = harness::parse_condition(condition);
                if (harness::is_test_condition(cond))
                    throw UsageError("test-time conditions evaluate the imagine checkpoint; train 'imagine' instead");
                std::optional<agent::Agent> base;
                if (cond != harness::Condition::baseline) {
                    if (init.empty()) throw UsageError("--init is required for condition " + condition);
                    base = train::load_checkpoint(init).agent;
                }
                st = train::init_state(harness::initial_agent(spec, assets, cond, base ? &*base : nullptr, c.seed),
                                       harness::condition_train(spec, cond, c.seed));
            }
            st.command = cmd;
            const int until = iterations > 0 ? std::min(iterations, st.cfg.iterations) : st.cfg.iterations;
            train::train(st, ds, until);
            train::save_checkpoint(st, c.out);
            if (!curve.empty()) write_out(curve, cmd, c.seed, [&](std::ostream& os) { train::write_curve(os, st.curve); });
            if (!st.curve.empty())
                std::printf("iteration %d: l_base %.4f l_aux %.4f\n", st.iteration, st.curve.back().l_base,
                            st.curve.back().l_aux);
        } else if (*ev) {
            const auto ds = load_dataset(c.data_dir, c.worlds, c.corpus, c.imaginations);
            const auto st = train::load_checkpoint(checkpoint);
            const auto pol = data::parse_policy(policy);
            const auto sp = world::parse_split(split);
            auto entries = ds.split(sp);
            if (multi) entries = harness::multi_landmark(ds, entries);
            if (entries.empty()) throw InputError("no episodes to evaluate");
            eval::AgentNavigator nav(st.agent);
            const auto m = eval::aggregate(eval::run_episodes(nav, ds, entries, pol, c.seed),
                                           multi ? harness::multi_split_name(sp) : world::split_name(sp),
                                           label.empty() ? data::policy_name(pol) : label, c.seed);
            auto emit = [&](std::ostream& os) {
                if (table) eval::write_metrics_table(os, {m});
                else eval::write_metrics_tsv(os, {m});
            };
            if (c.out.empty()) emit(std::cout);
            else write_out(c.out, cmd, c.seed, emit);
        } else if (*ab) {
            auto spec = harness::ExperimentSpec::load(spec_path);
            if (!seeds.empty()) spec.seeds = seeds;
            const auto assets = harness::load_assets(c.data_dir, spec.library, spec.library_seed);
            harness::RunOptions o;
            o.out_dir = c.out;
            o.command = cmd;
            o.log = quiet ? nullptr : &std::cerr;
            const auto rows = harness::run_ablation(spec, assets, o);
            const auto sum = harness::summarize(rows);
            harness::write_summary_table(std::cout, sum);
            for (const auto& v : harness::verdicts(sum)) std::cout << harness::format_verdict(v) << "\n";
        } else if (*pa) {
            const auto ds = load_dataset(c.data_dir, c.worlds, c.corpus, c.imaginations);
            const auto st = train::load_checkpoint(checkpoint);
            const instr::CorpusEntry* entry = nullptr;
            for (const auto& e : ds.corpus)
                if (e.episode.id == episode) entry = &e;
            if (!entry) throw LookupError("no episode " + std::to_string(episode) + " in the corpus");
            const auto& list = ds.imaginations.at(entry->instruction.id);
            if (imagination < 0 || imagination >= static_cast<int>(list.size()))
                throw LookupError("imagination index out of range");
            const auto in = data::policy_input(ds, *entry, data::Policy::correct);
            const auto traj = agent::rollout(st.agent, in, {agent::RolloutMode::argmax, 15, true}, c.seed);
            const int referent = list[imagination].true_class;
            const auto r = agent::attention_probe(traj, *in.world, layer, head, imagination, referent, k);
            std::printf("episode %d, imagination %d (class %s), step %d\n", episode, imagination,
                        ds.worlds.library.classes.at(referent).phrase.c_str(), r.step);
            std::printf("text keys:");
            for (int p : r.text_keys) std::printf(" %d:%s", p, entry->instruction.tokens.at(p).c_str());
            std::printf("\nviews:");
            const int node = traj.steps.at(r.step).node;
            for (int v : r.views) {
                const int cls = in.world->placement_at(node, v);
                std::printf(" %d:%s", v, cls >= 0 ? ds.worlds.library.classes.at(cls).phrase.c_str() : "-");
            }
            std::printf("\n");
        } else if (*rp) {
            std::vector<eval::MetricsRecord> rows;
            for (const auto& f : metrics_files) {
                auto in = open_in(f);
                try {
                    for (auto& r : eval::read_metrics_tsv(in)) rows.push_back(std::move(r));
                } catch (const ParseError& e) {
                    throw ParseError(f + ": " + e.what());
                }
            }
            if (rows.empty()) throw InputError("no metrics rows to report");
            const auto sum = harness::summarize(rows);
            const auto vs = harness::verdicts(sum, world::parse_split(split));
            harness::write_summary_table(std::cout, sum);
            for (const auto& v : vs) std::cout << harness::format_verdict(v) << "\n";
            if (!c.out.empty()) {
                const std::uint64_t seed = rows.front().seed;
                write_out(c.out + ".metrics.tsv", cmd, seed, [&](std::ostream& os) { eval::write_metrics_tsv(os, rows); });
                write_out(c.out + ".summary.tsv", cmd, seed, [&](std::ostream& os) { harness::write_summary_tsv(os, sum); });
                write_out(c.out + ".summary.txt", cmd, seed, [&](std::ostream& os) {
                    harness::write_summary_table(os, sum);
                    for (const auto& v : vs) os << harness::format_verdict(v) << "\n";
                });
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
