#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "imnav/errors.hpp"
#include "imnav/training.hpp"

using namespace imnav;
using namespace imnav::train;
using nc::BasicTape;
using nc::BasicVar;

namespace {

const data::Dataset& dataset() {
    static const data::Dataset ds = testing::small_dataset(53, 50, 5, 5);
    return ds;
}

agent::AgentConfig small_agent(int d = 16) {
    agent::AgentConfig c;
    c.d = d;
    c.heads = 2;
    c.cross_layers = 1;
    c.d_v = testing::library().d_v;
    c.vocab = testing::text_kit().vocab.size();
    return c;
}

TrainConfig small_train(int iterations, std::uint64_t seed = 3) {
    TrainConfig t;
    t.iterations = iterations;
    t.batch = 4;
    t.seed = seed;
    return t;
}

std::vector<float> flat_params(const agent::Agent& a) {
    std::vector<float> out;
    for (const auto& e : a.params().entries()) out.insert(out.end(), e.tensor.values().begin(), e.tensor.values().end());
    return out;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::string temp_path(const std::string& name) { return "/tmp/imnav_test_" + name; }

template <typename T>
BasicVar<T> row(BasicTape<T>& t, std::vector<T> v) {
    const int n = static_cast<int>(v.size());
    return t.constant(1, n, std::move(v));
}

}  // namespace

TEST_CASE("imitation loss") {
    BasicTape<double> t(false);
    auto sat = row<double>(t, {60.0, 0.0, 0.0});
    CHECK(imitation_loss<double>({sat, sat}, {0, 0}).item() < 1e-12);
    auto uni = row<double>(t, {0.3, 0.3, 0.3, 0.3});
    CHECK(std::abs(imitation_loss<double>({uni, uni, uni}, {0, 2, 3}).item() - std::log(4.0)) < 1e-12);

    Rng rng = make_rng(4);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<BasicVar<double>> logits;
    std::vector<int> targets{1, 0, 3};
    long double oracle = 0.0L;
    for (int s = 0; s < 3; ++s) {
        std::vector<double> v(4 + s);
        for (auto& x : v) x = n(rng);
        long double z = 0.0L;
        for (double x : v) z += std::exp(static_cast<long double>(x));
        oracle += std::log(z) - v[targets[s]];
        logits.push_back(row<double>(t, v));
    }
    CHECK(std::abs(imitation_loss<double>(logits, targets).item() - static_cast<double>(oracle / 3.0L)) < 1e-6);
    CHECK_THROWS_AS(imitation_loss<double>(logits, {1, 0}), ContractError);
}

TEST_CASE("cosine alignment loss anchors") {
    BasicTape<double> t(false);
    auto a = row<double>(t, {1.0, 2.0, -1.0});
    auto neg = row<double>(t, {-1.0, -2.0, 1.0});
    auto orth = row<double>(t, {2.0, -1.0, 0.0});
    CHECK(std::abs(cosine_alignment_loss<double>({a, a}, {a, a}).value.item()) < 1e-6);
    CHECK(std::abs(cosine_alignment_loss<double>({a}, {neg}).value.item() - 2.0) < 1e-6);
    CHECK(std::abs(cosine_alignment_loss<double>({a}, {orth}).value.item() - 1.0) < 1e-6);
    CHECK(std::abs(cosine_alignment_loss<double>({a, a}, {a, orth}).value.item() - 0.5) < 1e-6);
    CHECK(cosine_alignment_loss<double>({}, {}).skipped);

    Rng rng = make_rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<BasicVar<double>> h, s;
        for (int i = 0; i < 3; ++i) {
            h.push_back(t.constant(nc::random_normal(1, 6, 1.0, rng)));
            s.push_back(t.constant(nc::random_normal(1, 6, 1.0, rng)));
        }
        const double v = cosine_alignment_loss(h, s).value.item();
        CHECK(v >= 0.0);
        CHECK(v <= 2.0);
    }
}

TEST_CASE("InfoNCE anchors and oracle") {
    BasicTape<double> t(false);
    auto a = row<double>(t, {1.0, 0.5, 0.0});
    auto b = row<double>(t, {0.0, 1.0, 2.0});
    CHECK(std::abs(infonce_loss<double>({a}, {b}, {7}, 0.1).value.item()) < 1e-6);
    // Two instructions with the same similarity to both targets: ln 2 for each.
    auto p = row<double>(t, {1.0, 0.0, 0.0});
    auto q = row<double>(t, {0.0, 1.0, 0.0});
    auto r = row<double>(t, {1.0, 1.0, 0.0});
    CHECK(std::abs(infonce_loss<double>({r, r}, {p, q}, {1, 2}, 0.1).value.item() - std::numbers::ln2) < 1e-6);
    CHECK_THROWS_AS(infonce_loss<double>({a}, {b}, {1}, 0.0), ConfigError);
    CHECK(infonce_loss<double>({}, {}, {}, 0.1).skipped);

    Rng rng = make_rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> hv, sv;
        std::vector<BasicVar<double>> h, s;
        for (int i = 0; i < 4; ++i) {
            auto x = nc::random_normal(1, 5, 1.0, rng);
            auto y = nc::random_normal(1, 5, 1.0, rng);
            hv.emplace_back(x.values().begin(), x.values().end());
            sv.emplace_back(y.values().begin(), y.values().end());
            h.push_back(t.constant(x));
            s.push_back(t.constant(y));
        }
        // Pair 0 owns instruction 0; the others belong to three different instructions.
        const std::vector<int> owner{0, 1, 2, 3};
        auto cosl = [](const std::vector<double>& x, const std::vector<double>& y) {
            long double d = 0, nx = 0, ny = 0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                d += static_cast<long double>(x[k]) * y[k];
                nx += static_cast<long double>(x[k]) * x[k];
                ny += static_cast<long double>(y[k]) * y[k];
            }
            return d / std::sqrt(nx * ny);
        };
        long double oracle = 0.0L;
        for (int i = 0; i < 4; ++i) {
            long double z = 0.0L;
            for (int j = 0; j < 4; ++j) z += std::exp(cosl(hv[i], sv[j]) / 0.1L);
            oracle += -std::log(std::exp(cosl(hv[i], sv[i]) / 0.1L) / z);
        }
        const double got = infonce_loss(h, s, owner, 0.1).value.item();
        CHECK(std::abs(got - static_cast<double>(oracle / 4.0L)) < 1e-6);
        CHECK(got >= 0.0);
    }
}

TEST_CASE("total loss composition") {
    BasicTape<double> t(false);
    auto one = row<double>(t, {1.0});
    auto half = row<double>(t, {0.5});
    CHECK(total_loss(one, half, 0.5).item() == 1.25);
    CHECK(total_loss(one, half, 0.0).item() == 1.0);
    CHECK_THROWS_AS(total_loss(one, half, -1.0), ConfigError);

    // The batch total is exactly l_base + weight * l_aux as composed in float.
    const auto& ds = dataset();
    agent::Agent a(small_agent(), 1);
    auto cfg = small_train(10);
    auto pool = ds.split(world::Split::train);
    std::vector<const instr::CorpusEntry*> batch(pool.begin(), pool.begin() + 4);
    for (AuxLoss aux : {AuxLoss::cosine, AuxLoss::infonce, AuxLoss::none}) {
        cfg.aux = aux;
        nc::Tape tape(false);
        Rng rng = make_rng(1);
        auto lb = batch_loss(tape, a, ds, batch, cfg, rng, false);
        CHECK(lb.n_im > 0);
        const float expect = static_cast<float>(lb.l_base) + static_cast<float>(cfg.aux_weight() * static_cast<float>(lb.l_aux));
        CHECK(static_cast<float>(lb.total) == expect);
        if (aux == AuxLoss::none) {
            CHECK(lb.l_aux == 0.0);
            CHECK(lb.total == lb.l_base);
        }
    }
}

TEST_CASE("auxiliary loss gradients match finite differences") {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng = make_rng(100 + trial);
        nc::ParamStore ps;
        for (int i = 0; i < 3; ++i) {
            ps.add("h" + std::to_string(i), nc::Group::base, nc::random_normal(1, 6, 1.0, rng));
            ps.add("s" + std::to_string(i), nc::Group::base, nc::random_normal(1, 6, 1.0, rng));
        }
        for (bool nce : {false, true}) {
            auto f = [&](BasicTape<double>& t) {
                std::vector<BasicVar<double>> h, s;
                for (int i = 0; i < 3; ++i) {
                    h.push_back(t.param(ps.get("h" + std::to_string(i))));
                    s.push_back(t.param(ps.get("s" + std::to_string(i))));
                }
                return nce ? infonce_loss(h, s, {0, 1, 2}, 0.1).value : cosine_alignment_loss(h, s).value;
            };
            auto r = testing::check_gradients(ps, f);
            CHECK(r.max_rel < 1e-4);
            worst = std::max(worst, r.max_rel);
        }
    }
    MESSAGE("auxiliary loss gradient check: max relative error " << worst);
}

TEST_CASE("three-stage schedule") {
    TrainConfig c;
    c.iterations = 100000;
    c.lr_multiplier = 1.0;
    auto s1 = schedule_at(10000, c);
    CHECK(s1.stage == 1);
    CHECK(s1.lr.at(nc::Group::imagination_encoder) == 1e-4);
    CHECK(s1.lr.at(nc::Group::type_embedding) == 1e-4);
    CHECK(s1.lr.at(nc::Group::base) == 0.0);
    auto s2 = schedule_at(30000, c);
    CHECK(s2.stage == 2);
    CHECK(s2.lr.at(nc::Group::imagination_encoder) == 5e-5);
    CHECK(s2.lr.at(nc::Group::base) == 1e-6);
    auto s3 = schedule_at(80000, c);
    CHECK(s3.stage == 3);
    CHECK(s3.lr.at(nc::Group::imagination_encoder) == 1e-6);
    CHECK(s3.lr.at(nc::Group::base) == 1e-6);
    CHECK(schedule_at(24999, c).stage == 1);
    CHECK(schedule_at(25000, c).stage == 2);
    CHECK(schedule_at(49999, c).stage == 2);
    CHECK(schedule_at(50000, c).stage == 3);
    c.lr_multiplier = 10.0;
    CHECK(schedule_at(0, c).lr.at(nc::Group::imagination_encoder) == 1e-4 * 10.0);
    CHECK_THROWS_AS(schedule_at(100000, c), ContractError);
    CHECK_THROWS_AS(schedule_at(-1, c), ContractError);
    c.schedule = Schedule::pretrain;
    CHECK(schedule_at(5, c).lr.at(nc::Group::base) == c.pretrain_lr);

    TrainConfig bad;
    bad.fractions[2] = 0.4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lambda = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(TrainConfig::parse(c.to_text()).to_text() == c.to_text());
}

TEST_CASE("stage one leaves the base agent untouched") {
    const auto& ds = dataset();
    agent::Agent a(small_agent(), 2);
    a.init_imagination_from_observation();
    auto st = init_state(a, small_train(32));
    train::train(st, ds, 8);
    for (const auto& e : st.agent.params().entries()) {
        const auto& before = a.params().get(e.name).values();
        if (e.group == nc::Group::base) {
            CHECK_MESSAGE(same_bits(e.tensor.values(), before), e.name);
        } else {
            CHECK_MESSAGE(!same_bits(e.tensor.values(), before), e.name);
        }
    }
    train::train(st, ds, 9);
    CHECK_FALSE(same_bits(st.agent.params().get("head.act").values(), a.params().get("head.act").values()));
}

TEST_CASE("alignment loss only reaches imagination and text paths") {
    const auto& ds = dataset();
    agent::Agent a(small_agent(), 3);
    auto pool = ds.split(world::Split::train);
    a.params().zero_grad();
    nc::Tape tape;
    Rng rng = make_rng(2);
    std::vector<nc::Var> h, s;
    for (int i = 0; i < 4; ++i) {
        auto g = agent::teacher_forced(tape, a, data::policy_input(ds, *pool[i], data::Policy::correct), rng, true);
        h.insert(h.end(), g.h.begin(), g.h.end());
        s.insert(s.end(), g.sbar.begin(), g.sbar.end());
    }
    REQUIRE(!h.empty());
    tape.backward(cosine_alignment_loss(h, s).value);
    for (const auto& e : a.params().entries()) {
        double norm = 0.0;
        for (float g : e.tensor.grad()) norm += static_cast<double>(g) * g;
        const bool on_path = e.name.rfind("img.", 0) == 0 || e.name.rfind("text.", 0) == 0 || e.name == "type.im" ||
                             e.name == "type.text";
        if (on_path) {
            CHECK_MESSAGE(norm > 0.0, e.name);
        } else {
            CHECK_MESSAGE(norm == 0.0, e.name);
        }
    }
}

TEST_CASE("training is deterministic and baseline-equivalent without imaginations") {
    const auto& ds = dataset();
    auto run = [&](TrainConfig cfg) {
        auto st = init_state(agent::Agent(small_agent(), 4), cfg);
        train::train(st, ds);
        return st;
    };
    auto cfg = small_train(6);
    auto a = run(cfg);
    auto b = run(cfg);
    CHECK(same_bits(flat_params(a.agent), flat_params(b.agent)));

    TrainConfig base = small_train(6);
    base.imaginations = false;
    base.aux = AuxLoss::none;
    TrainConfig zero = base;
    zero.aux = AuxLoss::cosine;
    zero.lambda = 0.0;
    auto x = run(base);
    auto y = run(zero);
    REQUIRE(x.curve.size() == y.curve.size());
    for (std::size_t i = 0; i < x.curve.size(); ++i) CHECK(x.curve[i].l_base == y.curve[i].l_base);
    CHECK(same_bits(flat_params(x.agent), flat_params(y.agent)));
}

TEST_CASE("training reduces the loss on a small corpus") {
    const auto& ds = dataset();
    TrainConfig cfg = small_train(2000);
    cfg.schedule = Schedule::pretrain;
    cfg.batch = 2;
    cfg.aux = AuxLoss::none;
    cfg.imaginations = false;
    auto st = init_state(agent::Agent(small_agent(16), 5), cfg);
    train::train(st, ds);
    auto avg = [&](std::size_t from, std::size_t to) {
        double s = 0.0;
        for (std::size_t i = from; i < to; ++i) s += st.curve[i].l_base;
        return s / static_cast<double>(to - from);
    };
    const double first = avg(0, 50), last = avg(1950, 2000);
    MESSAGE("loss " << first << " -> " << last);
    CHECK(last <= 0.5 * first);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto& ds = dataset();
    agent::Agent a(small_agent(), 6);
    a.params().get("head.stop").values()[0] = std::numeric_limits<float>::quiet_NaN();
    auto st = init_state(a, small_train(4));
    try {
        train::train(st, ds);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
        CHECK(std::string(e.what()).find("head.stop") != std::string::npos);
    }
}

TEST_CASE("checkpoints") {
    const auto& ds = dataset();
    const std::string path = temp_path("ckpt.bin");
    auto cfg = small_train(12);
    cfg.eval_interval = 4;
    int calls = 0;
    Validator val = [&calls](const agent::Agent&) { return 0.25 * (++calls); };

    auto full = init_state(agent::Agent(small_agent(), 7), cfg);
    full.command = "imnav train --seed 3";
    train::train(full, ds, val);

    calls = 0;
    auto part = init_state(agent::Agent(small_agent(), 7), cfg);
    part.command = full.command;
    train::train(part, ds, 5, val);
    save_checkpoint(part, path);
    auto loaded = load_checkpoint(path);
    CHECK(same_bits(flat_params(loaded.agent), flat_params(part.agent)));
    CHECK(loaded.iteration == 5);
    CHECK(loaded.command == full.command);
    CHECK(rng_state(loaded.rng) == rng_state(part.rng));
    CHECK(loaded.agent.config().to_text() == part.agent.config().to_text());
    train::train(loaded, ds, val);
    CHECK(same_bits(flat_params(loaded.agent), flat_params(full.agent)));
    REQUIRE(loaded.curve.size() == full.curve.size());
    std::ostringstream c1, c2;
    write_curve(c1, full.curve);
    write_curve(c2, loaded.curve);
    CHECK(c1.str() == c2.str());
    CHECK(c1.str().find("\t-\n") != std::string::npos);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    bad = bytes;
    bad[5] = 2;
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    write(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.bin")), IoError);
    std::remove(path.c_str());
}
