// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "imnav/agent.hpp"
#include "imnav/errors.hpp"
#include "imnav/eval.hpp"
#include "imnav/harness.hpp"
#include "imnav/training.hpp"

using namespace imnav;
using nc::BasicTape;
using nc::BasicVar;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<float> flat_params(const agent::Agent& a) {
    std::vector<float> out;
    for (const auto& e : a.params().entries()) out.insert(out.end(), e.tensor.values().begin(), e.tensor.values().end());
    return out;
}

agent::AgentConfig small_agent(int d, int cross_layers) {
    agent::AgentConfig c;
    c.d = d;
    c.heads = 2;
    c.cross_layers = cross_layers;
    c.d_v = testing::library().d_v;
    c.vocab = testing::text_kit().vocab.size();
    return c;
}

std::vector<const instr::CorpusEntry*> multi_entries(const data::Dataset& ds, int n) {
    std::vector<const instr::CorpusEntry*> out;
    for (const auto& e : ds.corpus)
        if (e.kept().size() >= 2 && static_cast<int>(out.size()) < n) out.push_back(&e);
    return out;
}

template <typename T>
BasicVar<T> row(BasicTape<T>& t, std::vector<T> v) {
    const int n = static_cast<int>(v.size());
    return t.constant(1, n, std::move(v));
}

Outcome gradients() {
    double worst = 0.0;
    int instances = 0, checked = 0, kinked = 0;
    auto note = [&](const testing::GradCheck& r) {
        worst = std::max(worst, r.max_rel);
        checked += r.checked;
        kinked += r.kinked;
        ++instances;
    };
    // Primitive ops.
    Rng rng = make_rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        nc::ParamStore ps;
        ps.add("a", nc::Group::base, nc::random_normal(3, 4, 1.0, rng));
        ps.add("b", nc::Group::base, nc::random_normal(3, 4, 1.0, rng));
        ps.add("r", nc::Group::base, nc::random_normal(1, 4, 1.0, rng));
        ps.add("q", nc::Group::base, nc::random_normal(2, 4, 1.0, rng));
        const std::vector<std::uint8_t> mask{1, 0, 1};
        auto f = [&](BasicTape<double>& t) {
            auto a = t.param(ps.get("a"));
            auto b = t.param(ps.get("b"));
            auto r = t.param(ps.get("r"));
            auto q = t.param(ps.get("q"));
            auto s = nc::sigmoid(nc::add_row(nc::sub(a, nc::scale(b, 0.5)), r));
            auto sm = nc::softmax(nc::mul(a, b), 0);
            auto cat = nc::concat<double>({s, sm, nc::transpose(nc::transpose(a))}, 0);
            auto att = nc::attention(q, a, b, 2, mask);
            auto l = nc::add_const(nc::sum(nc::mean(nc::matmul(cat, b, true), 1)), 0.1);
            l = nc::add(l, nc::scale(nc::l2_norm(nc::gather_rows(cat, {0, 4, 4, 8})), 0.3));
            l = nc::add(l, nc::cross_entropy(nc::transpose(nc::mean(att, 1)), 1));
            l = nc::add(l, nc::cosine_similarity(nc::slice_rows(a, 0, 1), nc::slice_rows(b, 2, 1)));
            return nc::add(l, nc::sum(nc::mul(att, att)));
        };
        note(testing::check_gradients(ps, f));
    }
    // Full agent under every architecture variant.
    const auto ds = testing::small_dataset(41);
    const auto entries = multi_entries(ds, 20);
    if (entries.size() < 20) return {false, "fewer than 20 multi-landmark episodes"};
    for (int i = 0; i < 20; ++i) {
        agent::AgentConfig c = small_agent(8, 1);
        if (i % 5 == 1) c.fusion = agent::Fusion::late;
        if (i % 5 == 2) c.concat_target = agent::ConcatTarget::visual;
        if (i % 5 == 3) c.imagination_encoder = agent::ImaginationEncoder::transformer;
        if (i % 5 == 4) c.text_only = true;
        agent::Agent a(c, 100 + i);
        auto in = data::policy_input(ds, *entries[i], data::Policy::correct);
        auto loss = [&](BasicTape<double>& tape) {
            Rng r = make_rng(i);
            return agent::teacher_forced(tape, a, in, r, true).nav_loss;
        };
        note(testing::check_gradients(a.params(), loss, 1e-3, 1e-3, 6));
    }
    // Both auxiliary losses.
    for (int trial = 0; trial < 20; ++trial) {
        Rng r = make_rng(100 + trial);
        nc::ParamStore ps;
        for (int i = 0; i < 3; ++i) {
            ps.add("h" + std::to_string(i), nc::Group::base, nc::random_normal(1, 6, 1.0, r));
            ps.add("s" + std::to_string(i), nc::Group::base, nc::random_normal(1, 6, 1.0, r));
        }
        for (bool nce : {false, true}) {
            auto f = [&](BasicTape<double>& t) {
                std::vector<BasicVar<double>> h, s;
                for (int i = 0; i < 3; ++i) {
                    h.push_back(t.param(ps.get("h" + std::to_string(i))));
                    s.push_back(t.param(ps.get("s" + std::to_string(i))));
                }
                return nce ? train::infonce_loss(h, s, {0, 1, 2}, 0.1).value : train::cosine_alignment_loss(h, s).value;
            };
            note(testing::check_gradients(ps, f));
        }
    }
    const bool ok = worst < 1e-4 && kinked * 10 < checked;
    return {ok, fmt("max rel err %.2e over %d instances, %d coordinates (%d at relu kinks skipped)", worst, instances,
                    checked, kinked)};
}

Outcome loss_identities() {
    BasicTape<double> t(false);
    auto a = row<double>(t, {1.0, 2.0, -1.0});
    auto neg = row<double>(t, {-1.0, -2.0, 1.0});
    auto orth = row<double>(t, {2.0, -1.0, 0.0});
    double err = 0.0;
    err = std::max(err, std::abs(train::cosine_alignment_loss<double>({a}, {a}).value.item()));
    err = std::max(err, std::abs(train::cosine_alignment_loss<double>({a}, {orth}).value.item() - 1.0));
    err = std::max(err, std::abs(train::cosine_alignment_loss<double>({a}, {neg}).value.item() - 2.0));
    bool range = true;
    Rng rng = make_rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<BasicVar<double>> h, s;
        for (int i = 0; i < 3; ++i) {
            h.push_back(t.constant(nc::random_normal(1, 6, 1.0, rng)));
            s.push_back(t.constant(nc::random_normal(1, 6, 1.0, rng)));
        }
        const double v = train::cosine_alignment_loss(h, s).value.item();
        range = range && v >= 0.0 && v <= 2.0;
    }
    auto p = row<double>(t, {1.0, 0.0, 0.0});
    auto q = row<double>(t, {0.0, 1.0, 0.0});
    auto r = row<double>(t, {1.0, 1.0, 0.0});
    err = std::max(err, std::abs(train::infonce_loss<double>({a}, {orth}, {7}, 0.1).value.item()));
    err = std::max(err, std::abs(train::infonce_loss<double>({r, r}, {p, q}, {1, 2}, 0.1).value.item() - std::numbers::ln2));

    // Batch total composed from its parts.
    bool composed = true;
    const auto ds = testing::small_dataset(53, 50, 5, 5);
    agent::Agent ag(small_agent(16, 1), 1);
    train::TrainConfig cfg;
    cfg.iterations = 10;
    cfg.batch = 4;
    auto pool = ds.split(world::Split::train);
    std::vector<const instr::CorpusEntry*> batch(pool.begin(), pool.begin() + 4);
    for (auto aux : {train::AuxLoss::cosine, train::AuxLoss::infonce, train::AuxLoss::none}) {
        cfg.aux = aux;
        nc::Tape tape(false);
        Rng br = make_rng(1);
        auto lb = train::batch_loss(tape, ag, ds, batch, cfg, br, false);
        const float expect =
            static_cast<float>(lb.l_base) + static_cast<float>(cfg.aux_weight() * static_cast<float>(lb.l_aux));
        composed = composed && lb.n_im > 0 && static_cast<float>(lb.total) == expect;
        if (aux == train::AuxLoss::none) composed = composed && lb.total == lb.l_base;
    }
    composed = composed && train::total_loss(row<double>(t, {1.0}), row<double>(t, {0.5}), 0.5).item() == 1.25;
    return {err < 1e-6 && range && composed,
            fmt("anchor max err %.1e, range %s, composition %s", err, range ? "ok" : "violated", composed ? "exact" : "off")};
}

Outcome masking() {
    const auto ds = testing::small_dataset(41);
    int compared = 0, mismatched = 0;
    for (int variant = 0; variant < 3; ++variant) {
        agent::AgentConfig c = small_agent(16, 2);
        c.K = 12;
        if (variant == 1) c.concat_target = agent::ConcatTarget::visual;
        if (variant == 2) c.fusion = agent::Fusion::late;
        agent::Agent a(c, 10 + variant);
        for (int i = 0; i < 20; ++i) {
            const auto& e = ds.corpus[i];
            auto masked = data::policy_input(ds, e, data::Policy::null);
            auto removed = data::policy_input(ds, e, data::Policy::none);
            for (auto mode : {agent::RolloutMode::teacher, agent::RolloutMode::argmax}) {
                auto tm = agent::rollout(a, masked, {mode, 15, false}, 77);
                auto tr = agent::rollout(a, removed, {mode, 15, false}, 77);
                bool same = tm.steps.size() == tr.steps.size() && tm.visited == tr.visited;
                for (std::size_t s = 0; same && s < tm.steps.size(); ++s)
                    same = same_bits(tm.steps[s].logits, tr.steps[s].logits);
                ++compared;
                mismatched += !same;
            }
        }
    }
    return {mismatched == 0, fmt("%d rollouts over 20 episodes x 3 variants, %d differ", compared, mismatched)};
}

long double dist(const world::World& w, int a, int b) {
    const long double dx = static_cast<long double>(w.nodes[a].x) - w.nodes[b].x;
    const long double dy = static_cast<long double>(w.nodes[a].y) - w.nodes[b].y;
    return std::sqrt(dx * dx + dy * dy);
}

long double walk(const world::World& w, const std::vector<int>& v) {
    long double s = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) s += dist(w, v[i], v[i + 1]);
    return s;
}

Outcome metric_oracle() {
    const auto wf = testing::small_world_file(11, 2, 0);
    Rng rng = make_rng(11, 1);
    double worst = 0.0;
    bool spl_le_sr = true;
    for (int trial = 0; trial < 50; ++trial) {
        const auto& w = wf.worlds[trial % 2];
        const int n = 1 + static_cast<int>(uniform_index(rng, 8));
        std::vector<eval::EpisodeResult> results;
        long double sr = 0, spl = 0, ne = 0, tl = 0;
        for (int e = 0; e < n; ++e) {
            world::Episode ep = world::sample_episode(w, world::Mode::fine, rng());
            agent::Trajectory t;
            t.visited = {ep.start};
            const int steps = static_cast<int>(uniform_index(rng, 9));
            int extra = steps;
            if (uniform01(rng) < 0.5) {
                t.visited = ep.teacher_path;
                extra = steps / 3;
            }
            for (int s = 0; s < extra; ++s) {
                const auto& nav = w.nav[t.visited.back()];
                t.visited.push_back(nav[uniform_index(rng, nav.size())].neighbor);
            }
            results.push_back(eval::score(w, ep, t));
            const long double d = dist(w, t.visited.back(), ep.goal);
            const long double p = walk(w, t.visited), l = walk(w, ep.teacher_path);
            const bool ok = d <= 1.0L;
            sr += ok;
            spl += ok ? l / std::max(p, l) : 0.0L;
            ne += d;
            tl += p;
        }
        const auto m = eval::aggregate(results, "x", "none", 0);
        for (double diff : {m.sr - static_cast<double>(sr / n), m.spl - static_cast<double>(spl / n),
                            m.ne - static_cast<double>(ne / n), m.tl - static_cast<double>(tl / n)})
            worst = std::max(worst, std::fabs(diff));
        spl_le_sr = spl_le_sr && m.spl <= m.sr;
    }
    return {worst < 1e-9 && spl_le_sr, fmt("50 trajectory sets, max abs diff %.1e, SPL<=SR %s", worst,
                                           spl_le_sr ? "always" : "violated")};
}

Outcome filter_pipeline() {
    const auto& kit = testing::text_kit();
    auto verdict = [&](const std::string& text) {
        const auto toks = instr::tokenize(text);
        return instr::judge(instr::extract_noun_phrases(toks, {0, static_cast<int>(toks.size())}, kit.lexicon),
                            kit.lexicon);
    };
    const bool anchors = verdict("go straight then left") == instr::Verdict::no_noun &&
                         verdict("turn left") == instr::Verdict::blacklisted &&
                         verdict("walk toward it") == instr::Verdict::blacklisted &&
                         verdict("walk past the pool table") == instr::Verdict::kept &&
                         verdict("enter the kitchen with blue walls") == instr::Verdict::kept;
    auto wf = testing::small_world_file(2);
    instr::CorpusConfig cfg;
    cfg.train = 600;
    cfg.val_seen = 200;
    cfg.val_unseen = 200;
    cfg.instruction.p_nonvisual = 0.5;
    const auto corpus = instr::generate_corpus(wf, kit.templates, kit.lexicon, kit.vocab, cfg, 4);
    long segs = 0, matched = 0, agree = 0;
    for (const auto& e : corpus) {
        const auto subs = instr::segment(e.instruction);
        const auto& gold = e.instruction.gold_segments;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            ++segs;
            matched += subs.size() == gold.size() && subs[i].span == gold[i];
            agree += (e.subs[i].verdict == instr::Verdict::kept) == (e.instruction.gold_landmarks[i] >= 0);
        }
    }
    return {anchors && matched == segs && agree == segs,
            fmt("anchors %s; %ld/%ld gold spans, %ld/%ld kept verdicts match", anchors ? "pass" : "fail", matched, segs,
                agree, segs)};
}

Outcome fidelity() {
    const auto& lib = testing::library();
    Rng rng = make_rng(2);
    imag::ImaginationSet set;
    for (int i = 0; i < 10000; ++i) {
        instr::SubInstruction s;
        s.landmark_class = i % lib.size();
        s.verdict = instr::Verdict::kept;
        set[i].push_back(imag::imagine(s, i, lib, {0.05, 0.95}, rng));
    }
    const auto rep = imag::fidelity_check(set, lib);
    return {std::abs(rep.frac_detected - 0.95) <= 0.02, fmt("detected %.2f%% of 10000", 100.0 * rep.frac_detected)};
}

Outcome schedule() {
    train::TrainConfig c;
    c.iterations = 100000;
    c.lr_multiplier = 1.0;
    struct Probe {
        int it;
        double im, base;
    };
    bool lrs = true;
    for (auto p : {Probe{0, 1e-4, 0.0}, Probe{24999, 1e-4, 0.0}, Probe{25000, 5e-5, 1e-6}, Probe{49999, 5e-5, 1e-6},
                   Probe{50000, 1e-6, 1e-6}, Probe{99999, 1e-6, 1e-6}}) {
        const auto s = train::schedule_at(p.it, c);
        lrs = lrs && s.lr.at(nc::Group::imagination_encoder) == p.im && s.lr.at(nc::Group::type_embedding) == p.im &&
              s.lr.at(nc::Group::base) == p.base;
    }
    c.lr_multiplier = 10.0;
    lrs = lrs && train::schedule_at(30000, c).lr.at(nc::Group::base) == 1e-6 * 10.0;

    // Stage one trains only the imagination parameters.
    const auto ds = testing::small_dataset(53, 50, 5, 5);
    agent::Agent a(small_agent(16, 1), 2);
    a.init_imagination_from_observation();
    train::TrainConfig tc;
    tc.iterations = 32;
    tc.batch = 4;
    tc.seed = 3;
    auto st = train::init_state(a, tc);
    train::train(st, ds, 8);
    int frozen = 0, moved = 0, base = 0, other = 0;
    for (const auto& e : st.agent.params().entries()) {
        const bool same = same_bits(e.tensor.values(), a.params().get(e.name).values());
        if (e.group == nc::Group::base) {
            ++base;
            frozen += same;
        } else {
            ++other;
            moved += !same;
        }
    }
    const bool ok = lrs && frozen == base && moved == other;
    return {ok, fmt("stage LRs %s; %d/%d base tensors bitwise unchanged after 25%%, %d/%d imagination tensors moved",
                    lrs ? "match" : "differ", frozen, base, moved, other)};
}

Outcome resume() {
    const auto ds = testing::small_dataset(53, 50, 5, 5);
    train::TrainConfig cfg;
    cfg.iterations = 40;
    cfg.batch = 4;
    cfg.seed = 3;
    cfg.eval_interval = 8;
    const agent::Agent start(small_agent(16, 1), 7);
    auto full = train::init_state(start, cfg);
    train::train(full, ds);
    auto part = train::init_state(start, cfg);
    train::train(part, ds, 17);
    const std::string path = (std::filesystem::temp_directory_path() / "imnav_acceptance.ckpt").string();
    train::save_checkpoint(part, path);
    auto loaded = train::load_checkpoint(path);
    std::filesystem::remove(path);
    train::train(loaded, ds);
    const bool ok = same_bits(flat_params(loaded.agent), flat_params(full.agent));
    return {ok, fmt("saved at iteration 17 of 40, resumed parameters %s", ok ? "bitwise equal" : "differ")};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const std::string& spec_path, const std::string& work) {
    const auto spec = harness::ExperimentSpec::load(spec_path);
    const auto assets = harness::load_assets(IMNAV_DATA_DIR, spec.library, spec.library_seed);
    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
        harness::RunOptions opts;
        opts.out_dir = work + "/determinism_" + std::to_string(run);
        opts.command = "imnav ablate --spec " + spec_path;
        std::filesystem::remove_all(opts.out_dir);
        harness::run_ablation(spec, assets, opts);
        bytes[run] = read_file(opts.out_dir + "/metrics.tsv");
    }
    const bool ok = !bytes[0].empty() && bytes[0] == bytes[1];
    return {ok, fmt("two ablate runs of %s: metrics.tsv %s (%zu bytes)", spec.name.c_str(),
                    ok ? "byte-identical" : "differs", bytes[0].size())};
}

struct Ordering {
    std::vector<harness::Summary> summary;
    std::string error;
};

Outcome verdict_outcome(const Ordering& o, const std::vector<std::string>& names) {
    if (!o.error.empty()) return {false, o.error};
    const auto all = harness::verdicts(o.summary);
    std::string detail;
    bool ok = true;
    for (const auto& n : names) {
        const harness::Verdict* v = nullptr;
        for (const auto& x : all)
            if (x.hypothesis == n) v = &x;
        if (!detail.empty()) detail += "; ";
        if (!v) {
            ok = false;
            detail += n + " missing";
            continue;
        }
        ok = ok && v->pass;
        detail += fmt("%s %+.2f", n.c_str(), v->delta);
    }
    return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imnav acceptance run"};
    std::string ordering_spec = std::string(IMNAV_CONFIG_DIR) + "/disambiguation.cfg";
    std::string determinism_spec = std::string(IMNAV_CONFIG_DIR) + "/smoke.cfg";
    std::string work = (std::filesystem::temp_directory_path() / "imnav_acceptance").string();
    std::set<int> only;
    app.add_option("--ordering-spec", ordering_spec, "experiment for the ordering criteria");
    app.add_option("--determinism-spec", determinism_spec, "experiment run twice for the determinism criterion");
    app.add_option("--work", work, "directory for run artifacts");
    app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 13));
    CLI11_PARSE(app, argc, argv);
    std::filesystem::create_directories(work);

    auto wanted = [&](int n) { return only.empty() || only.count(n) != 0; };
    Ordering ordering;
    if (wanted(8) || wanted(9) || wanted(10) || wanted(11)) {
        try {
            const auto spec = harness::ExperimentSpec::load(ordering_spec);
            const auto assets = harness::load_assets(IMNAV_DATA_DIR, spec.library, spec.library_seed);
            harness::RunOptions opts;
            opts.out_dir = work + "/ordering";
            opts.command = "imnav ablate --spec " + ordering_spec;
            opts.log = &std::cerr;
            const auto t0 = std::chrono::steady_clock::now();
            ordering.summary = harness::summarize(harness::run_ablation(spec, assets, opts));
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            harness::write_summary_table(std::cout, ordering.summary);
            std::printf("ordering suite: %zu seeds in %.0f s, artifacts in %s\n", spec.seeds.size(), secs,
                        opts.out_dir.c_str());
        } catch (const std::exception& e) {
            ordering.error = e.what();
        }
    }

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"loss identities", loss_identities},
        {"masking equivalence", masking},
        {"metric oracle", metric_oracle},
        {"filter pipeline", filter_pipeline},
        {"fidelity calibration", fidelity},
        {"schedule conformance", schedule},
        {"imagine beats baseline", [&] { return verdict_outcome(ordering, {"imagine>baseline"}); }},
        {"correct vs null and wrong", [&] { return verdict_outcome(ordering, {"correct>=null", "correct>wrong"}); }},
        {"sequential vs goal-only vs baseline",
         [&] { return verdict_outcome(ordering, {"sequential>goal_only", "goal_only>=baseline"}); }},
        {"auxiliary loss ablation", [&] { return verdict_outcome(ordering, {"cosine>=no_aux", "infonce~cosine"}); }},
        {"end-to-end determinism", [&] { return determinism(determinism_spec, work); }},
        {"checkpoint resume", resume},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!wanted(n)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("criterion %2d %-36s %s  %s (%.1f s)\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
