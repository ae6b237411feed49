#include "imnav/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::agent {

using nc::BasicTape;
using nc::BasicVar;
using nc::Group;
using nc::Tensor;

const char* fusion_name(Fusion f) { return f == Fusion::early ? "early" : "late"; }
const char* encoder_name(ImaginationEncoder e) { return e == ImaginationEncoder::mlp ? "mlp" : "transformer"; }
const char* concat_name(ConcatTarget c) { return c == ConcatTarget::text ? "text" : "visual"; }

void AgentConfig::validate() const {
    if (d <= 0 || heads <= 0 || d % heads != 0) throw ConfigError("agent width must be positive and divisible by heads");
    if (cross_layers <= 0) throw ConfigError("cross_layers must be positive");
    if (K <= 0 || d_v <= 0 || vocab <= 0) throw ConfigError("K, d_v and vocab must be positive");
    if (mlp_hidden < 0) throw ConfigError("mlp_hidden must be non-negative");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (text_only && fusion == Fusion::late) throw ConfigError("text_only requires early fusion");
}

std::string AgentConfig::to_text() const {
    std::ostringstream os;
    os << "d=" << d << "\nheads=" << heads << "\ncross_layers=" << cross_layers << "\nK=" << K << "\nd_v=" << d_v
       << "\nvocab=" << vocab << "\nmlp_hidden=" << mlp_hidden << "\ndropout_rate=" << records::format_double(dropout_rate)
       << "\nfusion=" << fusion_name(fusion) << "\nimagination_encoder=" << encoder_name(imagination_encoder)
       << "\nconcat_target=" << concat_name(concat_target) << "\ntext_only=" << (text_only ? 1 : 0)
       << "\norder_encoding=" << (order_encoding ? 1 : 0) << "\n";
    return os.str();
}

AgentConfig AgentConfig::parse(const std::string& text) {
    AgentConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = records::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("agent config: expected key=value, got '" + line + "'");
        const std::string key = records::trim(line.substr(0, eq));
        const std::string val = records::trim(line.substr(eq + 1));
        if (key == "d") c.d = records::to_int(val, 0);
        else if (key == "heads") c.heads = records::to_int(val, 0);
        else if (key == "cross_layers") c.cross_layers = records::to_int(val, 0);
        else if (key == "K") c.K = records::to_int(val, 0);
        else if (key == "d_v") c.d_v = records::to_int(val, 0);
        else if (key == "vocab") c.vocab = records::to_int(val, 0);
        else if (key == "mlp_hidden") c.mlp_hidden = records::to_int(val, 0);
        else if (key == "dropout_rate") c.dropout_rate = records::to_double(val, 0);
        else if (key == "fusion") {
            if (val != "early" && val != "late") throw ConfigError("unknown fusion '" + val + "'");
            c.fusion = val == "early" ? Fusion::early : Fusion::late;
        } else if (key == "imagination_encoder") {
            if (val != "mlp" && val != "transformer") throw ConfigError("unknown imagination_encoder '" + val + "'");
            c.imagination_encoder = val == "mlp" ? ImaginationEncoder::mlp : ImaginationEncoder::transformer;
        } else if (key == "concat_target") {
            if (val != "text" && val != "visual") throw ConfigError("unknown concat_target '" + val + "'");
            c.concat_target = val == "text" ? ConcatTarget::text : ConcatTarget::visual;
        } else if (key == "text_only") c.text_only = records::to_int(val, 0) != 0;
        else if (key == "order_encoding") c.order_encoding = records::to_int(val, 0) != 0;
        else throw ConfigError("unknown agent config key '" + key + "'");
    }
    return c;
}

namespace {

void add_attention(nc::ParamStore& ps, const std::string& prefix, Group g, int d, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (const char* w : {"wq", "wk", "wv"}) ps.add(prefix + "." + w, g, nc::random_normal(d, d, s, rng));
    ps.add(prefix + ".wo", g, nc::random_normal(d, d, 0.5 * s, rng));
}

void add_ffn(nc::ParamStore& ps, const std::string& prefix, Group g, int d, int h, Rng& rng) {
    ps.add(prefix + ".w1", g, nc::random_normal(d, h, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    ps.add(prefix + ".w2", g, nc::random_normal(h, d, 0.5 / std::sqrt(static_cast<double>(h)), rng));
}

template <typename T>
std::vector<T> sinusoid(int rows, int d, double amplitude) {
    std::vector<T> pe(static_cast<std::size_t>(rows) * d);
    for (int p = 0; p < rows; ++p)
        for (int i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
            pe[static_cast<std::size_t>(p) * d + i] = static_cast<T>(amplitude * (i % 2 == 0 ? std::sin(p * freq) : std::cos(p * freq)));
        }
    return pe;
}

constexpr double kPositionAmplitude = 0.5;

template <typename T>
struct Net {
    using V = BasicVar<T>;
    BasicTape<T>& tape;
    Agent& agent;
    const AgentConfig& c;

    Net(BasicTape<T>& t, Agent& a) : tape(t), agent(a), c(a.config()) {}

    V P(const std::string& name) { return tape.param(agent.params().get(name)); }
    V lin(V x, const std::string& name) { return nc::matmul(x, P(name)); }

    V attend(V xq, V xkv, const std::string& prefix, const std::vector<std::uint8_t>& mask, nc::AttentionWeights* rec) {
        V q = lin(xq, prefix + ".wq");
        V k = lin(xkv, prefix + ".wk");
        V v = lin(xkv, prefix + ".wv");
        return lin(nc::attention(q, k, v, c.heads, mask, rec), prefix + ".wo");
    }

    V ffn(V x, const std::string& prefix) { return lin(nc::relu(lin(x, prefix + ".w1")), prefix + ".w2"); }

    V block(V x, const std::string& prefix, const std::vector<std::uint8_t>& mask, nc::AttentionWeights* rec) {
        x = nc::add(x, attend(x, x, prefix + ".attn", mask, rec));
        return nc::add(x, ffn(x, prefix + ".ffn"));
    }

    V positions(int rows) { return tape.constant(rows, c.d, sinusoid<T>(rows, c.d, kPositionAmplitude)); }
};

// Language-side state shared by all steps of an episode.
template <typename T>
struct Context {
    using V = BasicVar<T>;
    V text;
    int L = 0;
    std::vector<V> h;                  // every imagination, masked or not
    std::vector<std::uint8_t> visible;
    std::vector<V> lang;               // per layer
    std::vector<std::uint8_t> lang_mask;
    bool has_pooled = false;
    V pooled;
    bool has_extra = false;
    V extra;                           // visual_concat rows
    std::vector<std::uint8_t> extra_mask;
};

template <typename T>
Context<T> build_context(Net<T>& net, const EpisodeInput& in, Rng& rng, bool train,
                         std::vector<nc::AttentionWeights>* lang_rec) {
    using V = BasicVar<T>;
    const AgentConfig& c = net.c;
    Context<T> ctx;
    ctx.text = encode_text(net.tape, net.agent, in.tokens, in.masked_tokens);
    ctx.L = ctx.text.rows();
    if (c.text_only) {
        for (const auto& im : in.imaginations) ctx.h.push_back(mean_nounphrase_embedding(ctx.text, im.noun_positions));
    } else {
        ctx.h = encode_imaginations(net.tape, net.agent, in.imaginations, rng, train);
    }
    for (const auto& im : in.imaginations) ctx.visible.push_back(im.visible ? 1 : 0);
    if (c.order_encoding && !ctx.h.empty()) {
        V pe = net.positions(static_cast<int>(ctx.h.size()));
        for (std::size_t i = 0; i < ctx.h.size(); ++i) ctx.h[i] = nc::add(ctx.h[i], nc::slice_rows(pe, static_cast<int>(i), 1));
    }

    V lang = ctx.text;
    ctx.lang_mask.assign(ctx.L, 1);
    const bool early_text = c.fusion == Fusion::early && c.concat_target == ConcatTarget::text;
    if (early_text && !ctx.h.empty()) {
        std::vector<V> parts{ctx.text};
        parts.insert(parts.end(), ctx.h.begin(), ctx.h.end());
        lang = nc::concat(parts, 0);
        ctx.lang_mask.insert(ctx.lang_mask.end(), ctx.visible.begin(), ctx.visible.end());
    }
    if (c.fusion == Fusion::early && c.concat_target == ConcatTarget::visual && !ctx.h.empty()) {
        ctx.has_extra = true;
        ctx.extra = nc::concat(ctx.h, 0);
        ctx.extra_mask = ctx.visible;
    }
    if (c.fusion == Fusion::late) {
        std::vector<V> vis;
        for (std::size_t i = 0; i < ctx.h.size(); ++i)
            if (ctx.visible[i]) vis.push_back(ctx.h[i]);
        if (!vis.empty()) {
            ctx.has_pooled = true;
            ctx.pooled = nc::mean(nc::concat(vis, 0), 0);
        }
    }
    if (lang_rec) lang_rec->assign(c.cross_layers, {});
    for (int l = 0; l < c.cross_layers; ++l) {
        lang = net.block(lang, "lang." + std::to_string(l), ctx.lang_mask, lang_rec ? &(*lang_rec)[l] : nullptr);
        ctx.lang.push_back(lang);
    }
    return ctx;
}

template <typename T>
struct StepOut {
    BasicVar<T> logits;
    BasicVar<T> ground;
    BasicVar<T> next_hist;
    std::vector<int> candidates;
};

template <typename T>
StepOut<T> step(Net<T>& net, const Context<T>& ctx, const world::World& w, int node, int heading, BasicVar<T> hist,
                Rng& rng, std::vector<nc::AttentionWeights>* cross_rec) {
    using V = BasicVar<T>;
    const AgentConfig& c = net.c;
    if (w.K != c.K || w.d_v != c.d_v) throw ShapeError("world panorama shape does not match the agent");
    const auto pano = world::observation_at(w, node, rng);
    V feats = net.tape.constant(c.K, c.d_v, std::vector<T>(pano.features.begin(), pano.features.end()));
    std::vector<int> rel(c.K);
    for (int v = 0; v < c.K; ++v) rel[v] = ((v - heading) % c.K + c.K) % c.K;
    V views = nc::add(nc::matmul(feats, net.P("obs.proj")), nc::gather_rows(net.P("obs.view_emb"), rel));
    views = nc::add_row(views, net.P("type.visual"));
    V x = nc::concat(std::vector<V>{views, hist}, 0);
    std::vector<std::uint8_t> vmask(c.K + 1, 1);
    if (ctx.has_extra) {
        x = nc::concat(std::vector<V>{x, ctx.extra}, 0);
        vmask.insert(vmask.end(), ctx.extra_mask.begin(), ctx.extra_mask.end());
    }
    if (cross_rec) cross_rec->assign(c.cross_layers, {});
    for (int l = 0; l < c.cross_layers; ++l) {
        const std::string p = "cross." + std::to_string(l);
        x = nc::add(x, net.attend(x, ctx.lang[l], p + ".xattn", ctx.lang_mask, cross_rec ? &(*cross_rec)[l] : nullptr));
        x = nc::add(x, net.attend(x, x, p + ".self", vmask, nullptr));
        x = nc::add(x, net.ffn(x, p + ".ffn"));
    }
    V out_views = nc::slice_rows(x, 0, c.K);
    V out_hist = nc::slice_rows(x, c.K, 1);

    StepOut<T> so;
    for (const auto& nv : world::navigable(w, node)) so.candidates.push_back(nv.view);
    V stop = nc::matmul(out_hist, net.P("head.stop"));
    if (so.candidates.empty()) {
        so.logits = stop;
    } else {
        V cand = nc::gather_rows(out_views, so.candidates);
        V act = nc::matmul(cand, net.P("head.act"));
        if (ctx.has_pooled) {
            V gate = nc::sigmoid(nc::matmul(cand, net.P("late.gate")));
            V fused = nc::matmul(nc::matmul(cand, net.P("late.fuse")), ctx.pooled, true);
            act = nc::add(act, nc::mul(gate, fused));
        }
        so.logits = nc::concat(std::vector<V>{act, stop}, 0);
    }
    so.ground = nc::matmul(out_views, net.P("head.ground"));
    so.next_hist = nc::relu(nc::add(nc::matmul(hist, net.P("obs.w_hh")), nc::matmul(nc::mean(views, 0), net.P("obs.w_hx"))));
    return so;
}

int index_of(const std::vector<int>& v, int x) {
    auto it = std::find(v.begin(), v.end(), x);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

}  // namespace

Agent::Agent(const AgentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, 0xa9e);
    const int d = cfg_.d, h = cfg_.hidden();
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sv = 1.0 / std::sqrt(static_cast<double>(cfg_.d_v));
    auto& ps = params_;
    ps.add("text.tok_emb", Group::base, nc::random_normal(cfg_.vocab, d, 1.0, rng));
    ps.add("type.text", Group::base, nc::random_normal(1, d, 0.1, rng));
    add_attention(ps, "text.attn", Group::base, d, rng);
    add_ffn(ps, "text.ffn", Group::base, d, h, rng);
    ps.add("obs.proj", Group::base, nc::random_normal(cfg_.d_v, d, 2.0 * sv, rng));
    ps.add("obs.view_emb", Group::base, nc::random_normal(cfg_.K, d, 0.5, rng));
    ps.add("type.visual", Group::base, nc::random_normal(1, d, 0.1, rng));
    ps.add("obs.hist0", Group::base, nc::random_normal(1, d, 0.5, rng));
    ps.add("obs.w_hh", Group::base, nc::random_normal(d, d, 0.5 * sd, rng));
    ps.add("obs.w_hx", Group::base, nc::random_normal(d, d, sd, rng));
    for (int l = 0; l < cfg_.cross_layers; ++l) {
        const std::string lp = "lang." + std::to_string(l);
        add_attention(ps, lp + ".attn", Group::base, d, rng);
        add_ffn(ps, lp + ".ffn", Group::base, d, h, rng);
        const std::string cp = "cross." + std::to_string(l);
        add_attention(ps, cp + ".xattn", Group::base, d, rng);
        add_attention(ps, cp + ".self", Group::base, d, rng);
        add_ffn(ps, cp + ".ffn", Group::base, d, h, rng);
    }
    ps.add("head.act", Group::base, nc::random_normal(d, 1, sd, rng));
    ps.add("head.stop", Group::base, nc::random_normal(d, 1, sd, rng));
    ps.add("head.ground", Group::base, nc::random_normal(d, 1, sd, rng));

    ps.add("type.im", Group::type_embedding, nc::random_normal(1, d, 0.1, rng));
    ps.add("img.proj", Group::imagination_encoder, nc::random_normal(cfg_.d_v, d, 2.0 * sv, rng));
    if (cfg_.imagination_encoder == ImaginationEncoder::mlp) {
        ps.add("img.mlp.w1", Group::imagination_encoder, nc::random_normal(d, h, sd, rng));
        ps.add("img.mlp.w2", Group::imagination_encoder, nc::random_normal(h, h, 1.0 / std::sqrt(static_cast<double>(h)), rng));
        ps.add("img.mlp.w3", Group::imagination_encoder, nc::random_normal(h, d, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    } else {
        add_attention(ps, "img.attn", Group::imagination_encoder, d, rng);
        add_ffn(ps, "img.ffn", Group::imagination_encoder, d, h, rng);
    }
    if (cfg_.fusion == Fusion::late) {
        ps.add("late.gate", Group::imagination_encoder, nc::random_normal(d, 1, sd, rng));
        ps.add("late.fuse", Group::imagination_encoder, nc::random_normal(d, d, 0.1 * sd, rng));
    }
}

void Agent::init_imagination_from_observation() {
    params_.get("img.proj").values() = params_.get("obs.proj").values();
}

int select_action(const std::vector<float>& logits) {
    if (logits.empty()) throw ContractError("select_action on empty logits");
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

template <typename T>
BasicVar<T> encode_text(BasicTape<T>& tape, Agent& agent, const std::vector<int>& tokens) {
    return encode_text(tape, agent, tokens, {});
}

template <typename T>
BasicVar<T> encode_text(BasicTape<T>& tape, Agent& agent, const std::vector<int>& tokens,
                        const std::vector<int>& masked) {
    if (tokens.empty()) throw ContractError("encode_text: empty instruction");
    Net<T> net(tape, agent);
    for (int t : tokens)
        if (t < 0 || t >= net.c.vocab) throw VocabularyError("token id " + std::to_string(t) + " outside the vocabulary");
    const int L = static_cast<int>(tokens.size());
    BasicVar<T> x = nc::gather_rows(net.P("text.tok_emb"), tokens);
    if (!masked.empty()) {
        std::vector<T> keep(static_cast<std::size_t>(L) * net.c.d, T(1));
        for (int p : masked) {
            if (p < 0 || p >= L) throw LookupError("masked token position outside the instruction");
            std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(p) * net.c.d, net.c.d, T(0));
        }
        x = nc::mul(x, tape.constant(L, net.c.d, std::move(keep)));
    }
    x = nc::add(x, net.positions(L));
    x = nc::add_row(x, net.P("type.text"));
    return net.block(x, "text", {}, nullptr);
}

template <typename T>
std::vector<BasicVar<T>> encode_imaginations(BasicTape<T>& tape, Agent& agent,
                                             const std::vector<ImaginationToken>& imaginations, Rng& rng, bool train) {
    using V = BasicVar<T>;
    std::vector<V> out;
    if (imaginations.empty()) return out;
    Net<T> net(tape, agent);
    const AgentConfig& c = net.c;
    const int n = static_cast<int>(imaginations.size());
    std::vector<T> z;
    z.reserve(static_cast<std::size_t>(n) * c.d_v);
    for (const auto& im : imaginations) {
        if (static_cast<int>(im.feature.size()) != c.d_v)
            throw ShapeError("imagination feature has " + std::to_string(im.feature.size()) + " dims, expected " +
                             std::to_string(c.d_v));
        z.insert(z.end(), im.feature.begin(), im.feature.end());
    }
    V x = nc::matmul(tape.constant(n, c.d_v, std::move(z)), net.P("img.proj"));
    x = nc::add_row(x, net.P("type.im"));
    x = nc::dropout(x, c.dropout_rate, rng, train);
    if (c.imagination_encoder == ImaginationEncoder::mlp) {
        x = nc::relu(net.lin(x, "img.mlp.w1"));
        x = nc::relu(net.lin(x, "img.mlp.w2"));
        x = net.lin(x, "img.mlp.w3");
    } else {
        x = nc::add(x, net.positions(n));
        x = net.block(x, "img", {}, nullptr);
    }
    for (int i = 0; i < n; ++i) out.push_back(nc::slice_rows(x, i, 1));
    return out;
}

template <typename T>
BasicVar<T> mean_nounphrase_embedding(BasicVar<T> text, const std::vector<int>& positions) {
    if (positions.empty()) throw ContractError("sub-instruction has no noun-phrase tokens");
    for (int p : positions)
        if (p < 0 || p >= text.rows()) throw LookupError("noun-phrase position outside the instruction");
    return nc::mean(nc::gather_rows(text, positions), 0);
}

template <typename T>
BasicVar<T> step_logits(BasicTape<T>& tape, Agent& agent, const EpisodeInput& input, int node, int heading, Rng& rng,
                        bool train) {
    Net<T> net(tape, agent);
    auto ctx = build_context(net, input, rng, train, nullptr);
    return step(net, ctx, *input.world, node, heading, net.P("obs.hist0"), rng, nullptr).logits;
}

template <typename T>
EpisodeGraph<T> teacher_forced(BasicTape<T>& tape, Agent& agent, const EpisodeInput& input, Rng& rng, bool train) {
    using V = BasicVar<T>;
    if (!input.world || !input.episode) throw ContractError("episode input without world or episode");
    const auto& w = *input.world;
    const auto& ep = *input.episode;
    if (ep.teacher_path.empty()) throw ContractError("episode has no teacher path");
    Net<T> net(tape, agent);
    auto ctx = build_context(net, input, rng, train, nullptr);
    EpisodeGraph<T> g;
    // Alignment targets always come from the unmasked instruction.
    V text = ctx.text;
    if (!input.masked_tokens.empty() && !ctx.h.empty()) text = encode_text(tape, agent, input.tokens, {});
    for (std::size_t i = 0; i < ctx.h.size(); ++i) {
        if (!ctx.visible[i]) continue;
        const auto& pos = input.imaginations[i].noun_positions;
        if (pos.empty()) continue;
        g.h.push_back(ctx.h[i]);
        g.sbar.push_back(mean_nounphrase_embedding(text, pos));
    }
    V hist = net.P("obs.hist0");
    int heading = ep.start_heading;
    std::vector<V> losses;
    const int T_edges = ep.edges();
    for (int t = 0; t <= T_edges; ++t) {
        const int node = ep.teacher_path[t];
        auto so = step(net, ctx, w, node, heading, hist, rng, nullptr);
        int target = static_cast<int>(so.candidates.size());
        int view = -1;
        if (t < T_edges) {
            view = w.view_to(node, ep.teacher_path[t + 1]);
            target = index_of(so.candidates, view);
            if (target < 0) throw ContractError("teacher edge is not navigable");
        }
        losses.push_back(nc::cross_entropy(so.logits, target));
        g.logits.push_back(std::vector<float>(so.logits.data(), so.logits.data() + so.logits.size()));
        g.targets.push_back(target);
        if (t == T_edges && ep.mode == world::Mode::coarse) {
            int gv = -1;
            for (const auto& p : w.placements[node])
                if (p.class_id == ep.target_landmark) gv = p.view;
            if (gv < 0) throw ContractError("coarse target landmark is not at the goal");
            losses.push_back(nc::cross_entropy(so.ground, gv));
        }
        if (t < T_edges) {
            hist = so.next_hist;
            heading = view;
        }
    }
    V total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = nc::add(total, losses[i]);
    g.nav_loss = nc::scale(total, 1.0 / static_cast<double>(T_edges + 1));
    return g;
}

Trajectory rollout(const Agent& agent_c, const EpisodeInput& input, const RolloutOptions& opt, std::uint64_t seed) {
    if (!input.world || !input.episode) throw ContractError("episode input without world or episode");
    // Parameters are only read: a float tape without gradients references them in place.
    Agent& agent = const_cast<Agent&>(agent_c);
    const auto& w = *input.world;
    const auto& ep = *input.episode;
    BasicTape<float> tape(false);
    Net<float> net(tape, agent);
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(ep.id));
    Trajectory tr;
    auto ctx = build_context(net, input, rng, false, opt.record_attention ? &tr.language : nullptr);
    tr.text_length = ctx.L;
    tr.imagination_count = static_cast<int>(ctx.h.size());
    BasicVar<float> hist = net.P("obs.hist0");
    int node = ep.start;
    int heading = ep.start_heading;
    tr.visited.push_back(node);
    const int limit = opt.mode == RolloutMode::teacher ? ep.edges() + 1 : opt.max_steps;
    for (int t = 0; t < limit; ++t) {
        StepRecord rec;
        rec.node = node;
        rec.heading = heading;
        auto so = step(net, ctx, w, node, heading, hist, rng, opt.record_attention ? &rec.cross : nullptr);
        rec.candidates = so.candidates;
        rec.logits = so.logits.values();
        const int stop = static_cast<int>(so.candidates.size());
        if (opt.mode == RolloutMode::teacher) {
            rec.action = t < ep.edges() ? index_of(so.candidates, w.view_to(node, ep.teacher_path[t + 1])) : stop;
        } else {
            rec.action = select_action(rec.logits);
        }
        tr.steps.push_back(std::move(rec));
        const int a = tr.steps.back().action;
        if (a == stop) {
            tr.stopped = true;
            const auto g = so.ground.values();
            tr.ground_view = select_action(g);
            break;
        }
        const int view = so.candidates[a];
        const int next = w.nav[node][a].neighbor;
        tr.length += w.distance(node, next);
        node = next;
        heading = view;
        hist = so.next_hist;
        tr.visited.push_back(node);
    }
    if (!tr.stopped) {
        // Truncated: the agent stops where it is; grounding uses the final panorama.
        auto so = step(net, ctx, w, node, heading, hist, rng, nullptr);
        tr.ground_view = select_action(so.ground.values());
    }
    return tr;
}

std::vector<int> top_k(const std::vector<float>& row, int k) {
    std::vector<int> idx(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&row](int a, int b) { return row[a] > row[b]; });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
    return idx;
}

ProbeResult attention_probe(const Trajectory& traj, const world::World& w, int layer, int head, int imagination,
                            int referent_class, int k) {
    if (traj.language.empty()) throw LookupError("trajectory has no attention records");
    if (layer < 0 || layer >= static_cast<int>(traj.language.size())) throw LookupError("layer out of range");
    const auto& lang = traj.language[layer];
    if (head < 0 || head >= lang.heads) throw LookupError("head out of range");
    if (imagination < 0 || imagination >= traj.imagination_count || lang.queries != traj.text_length + traj.imagination_count)
        throw LookupError("imagination index out of range");
    ProbeResult r;
    for (std::size_t s = 0; s < traj.steps.size() && r.step < 0; ++s)
        for (const auto& p : w.placements[traj.steps[s].node])
            if (p.class_id == referent_class) r.step = static_cast<int>(s);
    if (r.step < 0) throw LookupError("referent class never visible along the trajectory");
    const int q = traj.text_length + imagination;
    std::vector<float> row(traj.text_length);
    for (int j = 0; j < traj.text_length; ++j) row[j] = lang.at(head, q, j);
    r.text_keys = top_k(row, k);
    const auto& cross = traj.steps[r.step].cross.at(layer);
    std::vector<float> col(w.K);
    for (int v = 0; v < w.K; ++v) col[v] = cross.at(head, v, q);
    r.views = top_k(col, k);
    return r;
}

#define IMNAV_INSTANTIATE_AGENT(T)                                                                                    \
    template BasicVar<T> encode_text(BasicTape<T>&, Agent&, const std::vector<int>&);                                \
    template BasicVar<T> encode_text(BasicTape<T>&, Agent&, const std::vector<int>&, const std::vector<int>&);      \
    template std::vector<BasicVar<T>> encode_imaginations(BasicTape<T>&, Agent&, const std::vector<ImaginationToken>&, \
                                                          Rng&, bool);                                               \
    template BasicVar<T> mean_nounphrase_embedding(BasicVar<T>, const std::vector<int>&);                            \
    template BasicVar<T> step_logits(BasicTape<T>&, Agent&, const EpisodeInput&, int, int, Rng&, bool);              \
    template EpisodeGraph<T> teacher_forced(BasicTape<T>&, Agent&, const EpisodeInput&, Rng&, bool);

IMNAV_INSTANTIATE_AGENT(float)
IMNAV_INSTANTIATE_AGENT(double)

}  // namespace imnav::agent
