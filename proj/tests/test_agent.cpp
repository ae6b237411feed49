#include <algorithm>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "imnav/agent.hpp"
#include "imnav/dataset.hpp"
#include "imnav/errors.hpp"

using namespace imnav;
using namespace imnav::agent;
using imnav::testing::library;

namespace {

const data::Dataset& dataset() {
    static const data::Dataset ds = testing::small_dataset(41);
    return ds;
}

AgentConfig small_config(int d = 16) {
    AgentConfig c;
    c.d = d;
    c.heads = 2;
    c.cross_layers = 2;
    c.K = 12;
    c.d_v = library().d_v;
    c.vocab = testing::text_kit().vocab.size();
    return c;
}

std::vector<float> values(nc::Var v) { return v.values(); }

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Entries with at least two kept sub-instructions.
std::vector<const instr::CorpusEntry*> multi_landmark(int n) {
    std::vector<const instr::CorpusEntry*> out;
    for (const auto& e : dataset().corpus)
        if (e.kept().size() >= 2 && static_cast<int>(out.size()) < n) out.push_back(&e);
    return out;
}

std::vector<std::vector<float>> step_logits_of(const Trajectory& t) {
    std::vector<std::vector<float>> out;
    for (const auto& s : t.steps) out.push_back(s.logits);
    return out;
}

}  // namespace

TEST_CASE("config text round trip and validation") {
    AgentConfig c = small_config();
    c.fusion = Fusion::late;
    c.imagination_encoder = ImaginationEncoder::transformer;
    c.order_encoding = true;
    CHECK(AgentConfig::parse(c.to_text()).to_text() == c.to_text());
    CHECK(AgentConfig{}.hidden() == 43);
    AgentConfig bad = small_config();
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small_config();
    bad.dropout_rate = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(AgentConfig::parse("widthh=3"), ConfigError);
}

TEST_CASE("text encoder") {
    Agent a(small_config(), 1);
    nc::Tape tape(false);
    CHECK_THROWS_AS(encode_text(tape, a, {}), ContractError);
    CHECK_THROWS_AS(encode_text(tape, a, {a.config().vocab}), VocabularyError);
    const std::vector<int> toks{3, 9, 4, 17};
    auto x = encode_text(tape, a, toks);
    CHECK(x.rows() == 4);
    CHECK(x.cols() == 16);
    CHECK(bitwise_equal(values(x), values(encode_text(tape, a, toks))));
    // Swapping two tokens moves them to different positions; their encodings must change.
    auto y = encode_text(tape, a, {9, 3, 4, 17});
    std::vector<float> x0(x.data(), x.data() + 16), y1(y.data() + 16, y.data() + 32);
    CHECK_FALSE(bitwise_equal(x0, y1));
}

TEST_CASE("imagination encoder") {
    Agent a(small_config(), 2);
    Rng rng = make_rng(1);
    nc::Tape tape(false);
    CHECK(encode_imaginations(tape, a, {}, rng, false).empty());

    ImaginationToken im;
    im.feature = library().at(5).prototype;
    auto h = encode_imaginations(tape, a, {im, im}, rng, false);
    REQUIRE(h.size() == 2);
    CHECK(h[0].cols() == 16);

    auto& w3 = a.params().get("img.mlp.w3").values();
    std::fill(w3.begin(), w3.end(), 0.0f);
    for (auto v : encode_imaginations(tape, a, {im}, rng, true))
        for (float x : v.values()) CHECK(x == 0.0f);

    ImaginationToken bad;
    bad.feature.assign(3, 1.0f);
    CHECK_THROWS_AS(encode_imaginations(tape, a, {bad}, rng, false), ShapeError);

    AgentConfig wide = small_config(768);
    wide.heads = 12;
    Agent big(wide, 3);
    CHECK(big.params().get("img.proj").cols() == 768);
    CHECK(big.params().get("img.mlp.w1").rows() == 768);
    CHECK(big.params().get("img.mlp.w1").cols() == 512);
    CHECK(big.params().get("img.mlp.w2").cols() == 512);
    CHECK(big.params().get("img.mlp.w3").cols() == 768);
}

TEST_CASE("mean noun-phrase embedding") {
    nc::Tape tape(false);
    Rng rng = make_rng(9);
    auto t = nc::random_normal(6, 5, 1.0, rng);
    auto x = tape.constant(t);
    auto one = mean_nounphrase_embedding(x, {2});
    for (int c = 0; c < 5; ++c) CHECK(one.at(0, c) == t.at(2, c));
    auto m = mean_nounphrase_embedding(x, {0, 3, 5});
    for (int c = 0; c < 5; ++c) {
        const double oracle = (static_cast<double>(t.at(0, c)) + t.at(3, c) + t.at(5, c)) / 3.0;
        CHECK(std::abs(m.at(0, c) - oracle) < 1e-6);
    }
    CHECK_THROWS_AS(mean_nounphrase_embedding(x, {}), ContractError);
    CHECK_THROWS_AS(mean_nounphrase_embedding(x, {6}), LookupError);
}

TEST_CASE("action selection") {
    const float inf = std::numeric_limits<float>::infinity();
    CHECK(select_action({0.5f, 0.5f, 0.1f}) == 0);
    CHECK(select_action({1.0f, -inf}) == 0);
    CHECK(select_action({-1.0f, 2.0f, 2.0f}) == 1);
    CHECK_THROWS_AS(select_action({}), ContractError);
}

TEST_CASE("rollouts") {
    Agent a(small_config(), 4);
    const auto& ds = dataset();
    for (const auto* e : multi_landmark(5)) {
        auto in = data::policy_input(ds, *e, data::Policy::correct);
        auto teach = rollout(a, in, {RolloutMode::teacher, 15, false}, 3);
        CHECK(teach.visited == e->episode.teacher_path);
        CHECK(teach.stopped);
        auto g1 = rollout(a, in, {RolloutMode::argmax, 15, false}, 3);
        auto g2 = rollout(a, in, {RolloutMode::argmax, 15, false}, 3);
        CHECK(g1.visited == g2.visited);
        CHECK(step_logits_of(g1) == step_logits_of(g2));
        CHECK(static_cast<int>(g1.steps.size()) <= 15);
        for (const auto& s : g1.steps) CHECK(s.logits.size() == s.candidates.size() + 1);
    }
}

TEST_CASE("history token carries state across steps") {
    Agent a(small_config(), 5);
    const auto& ds = dataset();
    const auto* e = multi_landmark(1).at(0);
    auto in = data::policy_input(ds, *e, data::Policy::correct);
    auto teach = rollout(a, in, {RolloutMode::teacher, 15, false}, 8);
    REQUIRE(teach.steps.size() >= 3);
    // Same node, heading and observation noise stream, but the initial history.
    const auto& s2 = teach.steps[2];
    nc::Tape tape(false);
    Rng rng = make_rng(8, static_cast<std::uint64_t>(e->episode.id));
    auto fresh = step_logits(tape, a, in, s2.node, s2.heading, rng, false);
    CHECK(fresh.size() == static_cast<int>(s2.logits.size()));
    CHECK_FALSE(bitwise_equal(values(fresh), s2.logits));
}

TEST_CASE("masked imaginations equal removed imaginations bit for bit") {
    const auto& ds = dataset();
    for (int variant = 0; variant < 3; ++variant) {
        AgentConfig c = small_config();
        if (variant == 1) c.concat_target = ConcatTarget::visual;
        if (variant == 2) c.fusion = Fusion::late;
        Agent a(c, 10 + variant);
        int episodes = 0;
        for (const auto& e : ds.corpus) {
            if (episodes == 20) break;
            ++episodes;
            auto masked = data::policy_input(ds, e, data::Policy::null);
            auto removed = data::policy_input(ds, e, data::Policy::none);
            for (auto mode : {RolloutMode::teacher, RolloutMode::argmax}) {
                auto tm = rollout(a, masked, {mode, 15, false}, 77);
                auto tr = rollout(a, removed, {mode, 15, false}, 77);
                REQUIRE(tm.steps.size() == tr.steps.size());
                for (std::size_t s = 0; s < tm.steps.size(); ++s) CHECK(bitwise_equal(tm.steps[s].logits, tr.steps[s].logits));
                CHECK(tm.visited == tr.visited);
            }
        }
        CHECK(episodes == 20);
    }
}

TEST_CASE("attention rows sum to one") {
    Agent a(small_config(), 12);
    const auto& ds = dataset();
    double worst = 0.0;
    for (const auto* e : multi_landmark(5)) {
        auto t = rollout(a, data::policy_input(ds, *e, data::Policy::correct), {RolloutMode::argmax, 15, true}, 1);
        std::vector<const nc::AttentionWeights*> all;
        for (const auto& w : t.language) all.push_back(&w);
        for (const auto& s : t.steps)
            for (const auto& w : s.cross) all.push_back(&w);
        REQUIRE(!all.empty());
        for (const auto* w : all)
            for (int h = 0; h < w->heads; ++h)
                for (int q = 0; q < w->queries; ++q) {
                    double sum = 0.0;
                    for (int k = 0; k < w->keys; ++k) sum += w->at(h, q, k);
                    worst = std::max(worst, std::abs(sum - 1.0));
                }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("imagination order") {
    const auto& ds = dataset();
    for (bool ordered : {false, true}) {
        AgentConfig c = small_config();
        c.order_encoding = ordered;
        Agent a(c, 13);
        double max_diff = 0.0;
        for (const auto* e : multi_landmark(5)) {
            auto in = data::policy_input(ds, *e, data::Policy::correct);
            auto rev = in;
            std::reverse(rev.imaginations.begin(), rev.imaginations.end());
            auto t1 = rollout(a, in, {RolloutMode::teacher, 15, false}, 5);
            auto t2 = rollout(a, rev, {RolloutMode::teacher, 15, false}, 5);
            for (std::size_t s = 0; s < t1.steps.size(); ++s)
                for (std::size_t k = 0; k < t1.steps[s].logits.size(); ++k)
                    max_diff = std::max(max_diff, static_cast<double>(std::abs(t1.steps[s].logits[k] - t2.steps[s].logits[k])));
        }
        if (ordered) {
            CHECK(max_diff > 1e-4);
        } else {
            CHECK(max_diff < 1e-6);
        }
    }
}

TEST_CASE("late fusion") {
    AgentConfig c = small_config();
    c.fusion = Fusion::late;
    Agent a(c, 14);
    const auto& ds = dataset();
    const auto* e = multi_landmark(1).at(0);
    auto with = data::policy_input(ds, *e, data::Policy::correct);
    auto without = data::policy_input(ds, *e, data::Policy::none);
    auto base = rollout(a, without, {RolloutMode::teacher, 15, false}, 2);
    auto fused = rollout(a, with, {RolloutMode::teacher, 15, false}, 2);
    CHECK_FALSE(step_logits_of(base) == step_logits_of(fused));

    Agent zero = a;
    auto& f = zero.params().get("late.fuse").values();
    std::fill(f.begin(), f.end(), 0.0f);
    auto gated = rollout(zero, with, {RolloutMode::teacher, 15, false}, 2);
    CHECK(step_logits_of(gated) == step_logits_of(rollout(zero, without, {RolloutMode::teacher, 15, false}, 2)));

    // Gate parameters receive gradient when imaginations are present.
    a.params().zero_grad();
    nc::Tape tape;
    Rng rng = make_rng(3);
    tape.backward(teacher_forced(tape, a, with, rng, false).nav_loss);
    double norm = 0.0;
    for (const char* name : {"late.gate", "late.fuse"})
        for (float g : a.params().get(name).grad()) norm += static_cast<double>(g) * g;
    CHECK(norm > 0.0);
}

TEST_CASE("gradients reach imagination parameters") {
    Agent a(small_config(), 15);
    const auto& ds = dataset();
    for (const auto* e : multi_landmark(3)) {
        a.params().zero_grad();
        nc::Tape tape;
        Rng rng = make_rng(4);
        tape.backward(teacher_forced(tape, a, data::policy_input(ds, *e, data::Policy::correct), rng, true).nav_loss);
        for (const char* name : {"type.im", "img.proj", "img.mlp.w1", "img.mlp.w2", "img.mlp.w3"}) {
            double norm = 0.0;
            for (float g : a.params().get(name).grad()) norm += static_cast<double>(g) * g;
            CHECK_MESSAGE(norm > 0.0, name);
        }
    }
}

TEST_CASE("analytic gradients of the agent match finite differences") {
    const auto& ds = dataset();
    const auto entries = multi_landmark(20);
    REQUIRE(entries.size() == 20);
    double worst = 0.0;
    int checked = 0, kinked = 0;
    for (int i = 0; i < 20; ++i) {
        AgentConfig c = small_config(8);
        c.cross_layers = 1;
        if (i % 5 == 1) c.fusion = Fusion::late;
        if (i % 5 == 2) c.concat_target = ConcatTarget::visual;
        if (i % 5 == 3) c.imagination_encoder = ImaginationEncoder::transformer;
        if (i % 5 == 4) c.text_only = true;
        Agent a(c, 100 + i);
        auto in = data::policy_input(ds, *entries[i], data::Policy::correct);
        auto loss = [&](nc::BasicTape<double>& tape) {
            Rng rng = make_rng(i);
            return teacher_forced(tape, a, in, rng, true).nav_loss;
        };
        auto r = testing::check_gradients(a.params(), loss, 1e-3, 1e-3, 6);
        INFO("instance " << i);
        CHECK(r.max_rel < 1e-4);
        worst = std::max(worst, r.max_rel);
        checked += r.checked;
        kinked += r.kinked;
    }
    CHECK(kinked * 10 < checked);
    MESSAGE("agent gradient check: max relative error " << worst << " over " << checked << " coordinates, "
                                                        << kinked << " skipped at relu kinks");
}

TEST_CASE("attention probe") {
    CHECK(top_k({0.1f, 0.7f, 0.2f}, 1) == std::vector<int>{1});
    CHECK(top_k({0.25f, 0.25f, 0.25f, 0.25f}, 3) == std::vector<int>{0, 1, 2});
    CHECK(top_k({0.5f, 0.2f, 0.3f}, 10) == std::vector<int>{0, 2, 1});

    Agent a(small_config(), 16);
    const auto& ds = dataset();
    const auto* e = multi_landmark(1).at(0);
    auto in = data::policy_input(ds, *e, data::Policy::correct);
    auto t = rollout(a, in, {RolloutMode::teacher, 15, true}, 1);
    const auto& w = ds.world_of(e->episode);
    const int cls = ds.imaginations.at(e->instruction.id).at(0).true_class;
    auto p = attention_probe(t, w, 0, 1, 0, cls, 3);
    CHECK(p.step >= 0);
    CHECK(p.text_keys.size() == 3);
    CHECK(p.views.size() == 3);
    for (int k : p.text_keys) CHECK(k < t.text_length);
    CHECK_THROWS_AS(attention_probe(t, w, 0, 0, 99, cls, 3), LookupError);
    CHECK_THROWS_AS(attention_probe(t, w, 5, 0, 0, cls, 3), LookupError);
    auto plain = rollout(a, in, {RolloutMode::teacher, 15, false}, 1);
    CHECK_THROWS_AS(attention_probe(plain, w, 0, 0, 0, cls, 3), LookupError);
}

TEST_CASE("landmark dropout masks whole phrases") {
    const auto& ds = dataset();
    const auto* e = multi_landmark(1).at(0);
    auto in = data::policy_input(ds, *e, data::Policy::correct);
    REQUIRE(in.landmark_phrases.size() >= 2);
    for (const auto& p : in.landmark_phrases) CHECK_FALSE(p.empty());

    Rng rng = make_rng(3);
    auto zero = in;
    data::drop_landmarks(zero, 0.0, rng);
    CHECK(zero.masked_tokens.empty());
    CHECK_THROWS_AS(data::drop_landmarks(zero, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(data::drop_landmarks(zero, -0.1, rng), ConfigError);

    // Masked positions are unions of phrases; the masking rate tracks the configured one.
    int dropped = 0, total = 0;
    for (int trial = 0; trial < 400; ++trial) {
        auto x = in;
        data::drop_landmarks(x, 0.3, rng);
        std::size_t pos = 0;
        for (const auto& p : in.landmark_phrases) {
            ++total;
            if (pos < x.masked_tokens.size() && x.masked_tokens[pos] == p.front()) {
                CHECK(std::equal(p.begin(), p.end(), x.masked_tokens.begin() + static_cast<long>(pos)));
                pos += p.size();
                ++dropped;
            }
        }
        CHECK(pos == x.masked_tokens.size());
    }
    CHECK(std::abs(dropped / static_cast<double>(total) - 0.3) < 0.05);

    // A masked position keeps its position and type signal but loses the word itself.
    Agent a(small_config(), 4);
    nc::Tape tape(false);
    const auto& hide = in.landmark_phrases[0];
    auto plain = encode_text(tape, a, in.tokens);
    CHECK(bitwise_equal(values(plain), values(encode_text(tape, a, in.tokens, {}))));
    auto masked = encode_text(tape, a, in.tokens, hide);
    CHECK_FALSE(bitwise_equal(values(plain), values(masked)));
    auto swapped = in.tokens;
    for (int p : hide) swapped[p] = (swapped[p] + 1) % a.config().vocab;
    CHECK(bitwise_equal(values(masked), values(encode_text(tape, a, swapped, hide))));
    CHECK_THROWS_AS(encode_text(tape, a, in.tokens, {static_cast<int>(in.tokens.size())}), LookupError);
}
