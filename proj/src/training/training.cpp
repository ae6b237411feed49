#include "imnav/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imnav/errors.hpp"
#include "imnav/records.hpp"

namespace imnav::train {

using nc::BasicTape;
using nc::BasicVar;
using nc::Group;

const char* aux_name(AuxLoss a) {
    switch (a) {
        case AuxLoss::none: return "none";
        case AuxLoss::cosine: return "cosine";
        case AuxLoss::infonce: return "infonce";
    }
    return "?";
}

AuxLoss parse_aux(const std::string& s) {
    for (AuxLoss a : {AuxLoss::none, AuxLoss::cosine, AuxLoss::infonce})
        if (s == aux_name(a)) return a;
    throw ConfigError("unknown aux_loss '" + s + "'");
}

const char* schedule_name(Schedule s) { return s == Schedule::pretrain ? "pretrain" : "three_stage"; }

Schedule parse_schedule(const std::string& s) {
    if (s == "pretrain") return Schedule::pretrain;
    if (s == "three_stage") return Schedule::three_stage;
    throw ConfigError("unknown schedule '" + s + "'");
}

void TrainConfig::validate() const {
    if (iterations <= 0) throw ConfigError("iterations must be positive");
    if (batch <= 0) throw ConfigError("batch must be positive");
    if (!(lambda >= 0.0) || !(infonce_lambda >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(tau > 0.0)) throw ConfigError("InfoNCE temperature must be positive");
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("stage fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("stage fractions must sum to 1");
    if (!(lr_multiplier > 0.0) || !(pretrain_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (eval_interval < 0) throw ConfigError("eval_interval must be non-negative");
    if (!(landmark_dropout >= 0.0 && landmark_dropout < 1.0)) throw ConfigError("landmark_dropout must be in [0, 1)");
}

double TrainConfig::aux_weight() const {
    switch (aux) {
        case AuxLoss::none: return 0.0;
        case AuxLoss::cosine: return lambda;
        case AuxLoss::infonce: return infonce_lambda;
    }
    return 0.0;
}

std::string TrainConfig::to_text() const {
    using records::format_double;
    std::ostringstream os;
    os << "iterations=" << iterations << "\nbatch=" << batch << "\nlambda=" << format_double(lambda)
       << "\naux_loss=" << aux_name(aux) << "\ninfonce_lambda=" << format_double(infonce_lambda)
       << "\ntau=" << format_double(tau) << "\nschedule=" << schedule_name(schedule) << "\nfractions="
       << format_double(fractions[0]) << "," << format_double(fractions[1]) << "," << format_double(fractions[2])
       << "\nstage1_imagination=" << format_double(stage1_imagination)
       << "\nstage2_imagination=" << format_double(stage2_imagination)
       << "\nstage2_base=" << format_double(stage2_base) << "\nstage3_all=" << format_double(stage3_all)
       << "\nlr_multiplier=" << format_double(lr_multiplier) << "\npretrain_lr=" << format_double(pretrain_lr)
       << "\nimaginations=" << (imaginations ? 1 : 0) << "\nlandmark_dropout=" << format_double(landmark_dropout)
       << "\neval_interval=" << eval_interval << "\nseed=" << seed
       << "\n";
    return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = records::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("train config: expected key=value, got '" + line + "'");
        const std::string k = records::trim(line.substr(0, eq));
        const std::string v = records::trim(line.substr(eq + 1));
        if (k == "iterations") c.iterations = records::to_int(v, 0);
        else if (k == "batch") c.batch = records::to_int(v, 0);
        else if (k == "lambda") c.lambda = records::to_double(v, 0);
        else if (k == "aux_loss") c.aux = parse_aux(v);
        else if (k == "infonce_lambda") c.infonce_lambda = records::to_double(v, 0);
        else if (k == "tau") c.tau = records::to_double(v, 0);
        else if (k == "schedule") c.schedule = parse_schedule(v);
        else if (k == "fractions") {
            auto parts = records::split(v, ',');
            if (parts.size() != 3) throw ConfigError("fractions needs three values");
            for (int i = 0; i < 3; ++i) c.fractions[i] = records::to_double(records::trim(parts[i]), 0);
        } else if (k == "stage1_imagination") c.stage1_imagination = records::to_double(v, 0);
        else if (k == "stage2_imagination") c.stage2_imagination = records::to_double(v, 0);
        else if (k == "stage2_base") c.stage2_base = records::to_double(v, 0);
        else if (k == "stage3_all") c.stage3_all = records::to_double(v, 0);
        else if (k == "lr_multiplier") c.lr_multiplier = records::to_double(v, 0);
        else if (k == "pretrain_lr") c.pretrain_lr = records::to_double(v, 0);
        else if (k == "imaginations") c.imaginations = records::to_int(v, 0) != 0;
        else if (k == "landmark_dropout") c.landmark_dropout = records::to_double(v, 0);
        else if (k == "eval_interval") c.eval_interval = records::to_int(v, 0);
        else if (k == "seed") c.seed = records::to_u64(v, 0);
        else throw ConfigError("unknown train config key '" + k + "'");
    }
    return c;
}

template <typename T>
BasicVar<T> imitation_loss(const std::vector<BasicVar<T>>& step_logits, const std::vector<int>& teacher_actions) {
    if (step_logits.size() != teacher_actions.size())
        throw ContractError("imitation_loss: " + std::to_string(step_logits.size()) + " logit vectors for " +
                            std::to_string(teacher_actions.size()) + " teacher actions");
    if (step_logits.empty()) throw ContractError("imitation_loss: no steps");
    BasicVar<T> total = nc::cross_entropy(step_logits[0], teacher_actions[0]);
    for (std::size_t i = 1; i < step_logits.size(); ++i)
        total = nc::add(total, nc::cross_entropy(step_logits[i], teacher_actions[i]));
    return nc::scale(total, 1.0 / static_cast<double>(step_logits.size()));
}

template <typename T>
AuxValue<T> cosine_alignment_loss(const std::vector<BasicVar<T>>& h, const std::vector<BasicVar<T>>& s) {
    if (h.size() != s.size()) throw ContractError("cosine_alignment_loss: unpaired inputs");
    AuxValue<T> out;
    if (h.empty()) return out;
    BasicVar<T> acc = nc::add_const(nc::scale(nc::cosine_similarity(h[0], s[0]), -1.0), 1.0);
    for (std::size_t i = 1; i < h.size(); ++i)
        acc = nc::add(acc, nc::add_const(nc::scale(nc::cosine_similarity(h[i], s[i]), -1.0), 1.0));
    out.value = nc::scale(acc, 1.0 / static_cast<double>(h.size()));
    out.skipped = false;
    return out;
}

template <typename T>
AuxValue<T> infonce_loss(const std::vector<BasicVar<T>>& h, const std::vector<BasicVar<T>>& s,
                         const std::vector<int>& owner, double tau) {
    if (!(tau > 0.0)) throw ConfigError("InfoNCE temperature must be positive");
    if (h.size() != s.size() || h.size() != owner.size()) throw ContractError("infonce_loss: unpaired inputs");
    AuxValue<T> out;
    if (h.empty()) return out;
    BasicVar<T> acc;
    for (std::size_t i = 0; i < h.size(); ++i) {
        std::vector<BasicVar<T>> sims{nc::cosine_similarity(h[i], s[i])};
        for (std::size_t j = 0; j < s.size(); ++j)
            if (owner[j] != owner[i]) sims.push_back(nc::cosine_similarity(h[i], s[j]));
        BasicVar<T> ce = nc::cross_entropy(nc::scale(nc::concat(sims, 0), 1.0 / tau), 0);
        acc = i == 0 ? ce : nc::add(acc, ce);
    }
    out.value = nc::scale(acc, 1.0 / static_cast<double>(h.size()));
    out.skipped = false;
    return out;
}

template <typename T>
BasicVar<T> total_loss(BasicVar<T> base, BasicVar<T> aux, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("loss weight must be non-negative");
    return nc::add(base, nc::scale(aux, lambda));
}

StageRates schedule_at(int iter, const TrainConfig& cfg) {
    if (iter < 0 || iter >= cfg.iterations)
        throw ContractError("schedule queried at iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(cfg.iterations) + ")");
    StageRates r;
    if (cfg.schedule == Schedule::pretrain) {
        for (Group g : {Group::imagination_encoder, Group::type_embedding, Group::base}) r.lr[g] = cfg.pretrain_lr;
        return r;
    }
    const double n = cfg.iterations;
    const long b1 = std::lround(cfg.fractions[0] * n);
    const long b2 = std::lround((cfg.fractions[0] + cfg.fractions[1]) * n);
    const double m = cfg.lr_multiplier;
    double img = 0.0, base = 0.0;
    if (iter < b1) {
        r.stage = 1;
        img = cfg.stage1_imagination;
    } else if (iter < b2) {
        r.stage = 2;
        img = cfg.stage2_imagination;
        base = cfg.stage2_base;
    } else {
        r.stage = 3;
        img = base = cfg.stage3_all;
    }
    r.lr[Group::imagination_encoder] = img * m;
    r.lr[Group::type_embedding] = img * m;
    r.lr[Group::base] = base * m;
    return r;
}

void write_curve(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "iter\tl_base\tl_aux\tval_sr\n";
    for (const auto& p : curve) {
        os << p.iter << "\t" << records::format_double(p.l_base) << "\t" << records::format_double(p.l_aux) << "\t";
        if (p.evaluated) {
            os << records::format_double(p.val_sr);
        } else {
            os << "-";
        }
        os << "\n";
    }
}

std::vector<CurvePoint> read_curve(std::istream& is) {
    std::vector<CurvePoint> out;
    for (const auto& l : records::read_lines(is)) {
        if (l.fields[0] == "iter") continue;
        records::require_fields(l, 4);
        CurvePoint p;
        p.iter = records::to_int(l.fields[0], l.number);
        p.l_base = records::to_double(l.fields[1], l.number);
        p.l_aux = records::to_double(l.fields[2], l.number);
        p.evaluated = l.fields[3] != "-";
        if (p.evaluated) p.val_sr = records::to_double(l.fields[3], l.number);
        out.push_back(p);
    }
    return out;
}

TrainState init_state(agent::Agent agent, const TrainConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.agent = std::move(agent);
    st.cfg = cfg;
    st.rng = make_rng(cfg.seed, 0x7a1);
    return st;
}

LossBreakdown batch_loss(nc::Tape& tape, agent::Agent& agent, const data::Dataset& ds,
                         const std::vector<const instr::CorpusEntry*>& batch, const TrainConfig& cfg, Rng& rng,
                         bool backward) {
    if (batch.empty()) throw ContractError("empty batch");
    std::vector<nc::Var> nav, h, s;
    std::vector<int> owner;
    for (const auto* e : batch) {
        auto in = data::policy_input(ds, *e, cfg.imaginations ? data::Policy::correct : data::Policy::none);
        Rng erng(rng());
        if (cfg.landmark_dropout > 0.0) data::drop_landmarks(in, cfg.landmark_dropout, erng);
        auto g = agent::teacher_forced(tape, agent, in, erng, true);
        nav.push_back(g.nav_loss);
        for (std::size_t i = 0; i < g.h.size(); ++i) {
            h.push_back(g.h[i]);
            s.push_back(g.sbar[i]);
            owner.push_back(e->instruction.id);
        }
    }
    nc::Var base = nc::scale(nc::sum(nc::concat(nav, 0)), 1.0 / static_cast<double>(nav.size()));
    LossBreakdown lb;
    lb.n_im = static_cast<int>(h.size());
    lb.l_base = base.item();
    nc::Var total = base;
    if (cfg.aux != AuxLoss::none) {
        AuxValue<float> aux = cfg.aux == AuxLoss::cosine ? cosine_alignment_loss(h, s) : infonce_loss(h, s, owner, cfg.tau);
        if (!aux.skipped) {
            lb.l_aux = aux.value.item();
            total = total_loss(base, aux.value, cfg.aux_weight());
        }
    }
    lb.total = total.item();
    if (!std::isfinite(lb.total)) return lb;
    if (backward) tape.backward(total);
    return lb;
}

namespace {

std::string dump_state(const TrainState& st, const LossBreakdown& lb, const std::vector<const instr::CorpusEntry*>& batch) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << st.iteration << ": l_base=" << lb.l_base << " l_aux=" << lb.l_aux
       << " total=" << lb.total << " n_im=" << lb.n_im << "; batch instructions:";
    for (const auto* e : batch) os << " " << e->instruction.id;
    os << "; parameter norms:";
    for (const auto& e : st.agent.params().entries()) {
        double n = 0.0;
        for (float v : e.tensor.values()) n += static_cast<double>(v) * v;
        os << " " << e.name << "=" << std::sqrt(n);
    }
    return os.str();
}

}  // namespace

void train(TrainState& st, const data::Dataset& ds, int until, const Validator& validate) {
    st.cfg.validate();
    if (until > st.cfg.iterations) throw ContractError("train: target iteration beyond the configured count");
    const auto pool = ds.split(world::Split::train);
    if (pool.empty()) throw InputError("training split is empty");
    auto& ps = st.agent.params();
    for (; st.iteration < until; ++st.iteration) {
        const auto rates = schedule_at(st.iteration, st.cfg);
        for (auto& e : ps.entries()) e.tensor.requires_grad = rates.lr.at(e.group) > 0.0;
        std::vector<const instr::CorpusEntry*> batch;
        for (int b = 0; b < st.cfg.batch; ++b) batch.push_back(pool[uniform_index(st.rng, pool.size())]);
        ps.zero_grad();
        for (auto& e : ps.entries())
            if (e.tensor.requires_grad) e.tensor.ensure_grad();
        LossBreakdown lb;
        {
            nc::Tape tape;
            lb = batch_loss(tape, st.agent, ds, batch, st.cfg, st.rng, true);
        }
        if (!std::isfinite(lb.total)) throw NumericError(dump_state(st, lb, batch));
        st.adam.step(ps, rates.lr);
        CurvePoint p;
        p.iter = st.iteration;
        p.l_base = lb.l_base;
        p.l_aux = lb.l_aux;
        const int done = st.iteration + 1;
        if (validate && st.cfg.eval_interval > 0 && (done % st.cfg.eval_interval == 0 || done == st.cfg.iterations)) {
            p.evaluated = true;
            p.val_sr = validate(st.agent);
        }
        st.curve.push_back(p);
    }
    for (auto& e : ps.entries()) e.tensor.requires_grad = true;
}

// Checkpoint layout: "IMNAV", version byte, then little-endian u32-prefixed
// sections. Arrays are (name, rank, dims, f32 values).
namespace {

constexpr char kMagic[5] = {'I', 'M', 'N', 'A', 'V'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_array(std::ostream& os, const std::string& name, const std::vector<std::uint32_t>& dims,
               const std::vector<float>& v) {
    put_string(os, name);
    put_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put_u32(os, d);
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
}

struct Reader {
    std::istream& is;
    const std::string& path;

    void read(void* p, std::size_t n) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError(path + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    std::string str(std::size_t limit = 1u << 26) {
        const std::uint32_t n = u32();
        if (n > limit) throw FormatError(path + ": implausible string length");
        std::string s(n, '\0');
        if (n) read(s.data(), n);
        return s;
    }
    struct Array {
        std::string name;
        std::vector<std::uint32_t> dims;
        std::vector<float> values;
    };
    Array array() {
        Array a;
        a.name = str(4096);
        const std::uint32_t rank = u32();
        if (rank < 1 || rank > 2) throw FormatError(path + ": bad array rank for " + a.name);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            a.dims.push_back(u32());
            n *= a.dims.back();
        }
        if (n > (1u << 28)) throw FormatError(path + ": implausible array size for " + a.name);
        a.values.resize(n);
        for (auto& f : a.values) {
            const std::uint32_t bits = u32();
            std::memcpy(&f, &bits, 4);
        }
        return a;
    }
};

std::string section(const std::string& text, const std::string& name) {
    const std::string open = "[" + name + "]\n";
    const auto a = text.find(open);
    if (a == std::string::npos) throw FormatError("checkpoint config lacks section " + name);
    const auto start = a + open.size();
    const auto b = text.find("\n[", start);
    return text.substr(start, b == std::string::npos ? std::string::npos : b + 1 - start);
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write checkpoint " + path);
        os.write(kMagic, 5);
        os.put(static_cast<char>(kVersion));
        std::ostringstream cfg;
        cfg << "[run]\ncmd=" << st.command << "\nseed=" << st.cfg.seed << "\n[agent]\n"
            << st.agent.config().to_text() << "[train]\n" << st.cfg.to_text();
        put_string(os, cfg.str());
        const auto& ps = st.agent.params();
        put_u32(os, static_cast<std::uint32_t>(ps.size()));
        for (const auto& e : ps.entries()) put_array(os, e.name, e.tensor.dims(), e.tensor.values());
        const auto& slots = st.adam.slots();
        put_u32(os, static_cast<std::uint32_t>(3 * slots.size()));
        for (const auto& [name, slot] : slots) {
            const std::uint32_t n = static_cast<std::uint32_t>(slot.m.size());
            put_array(os, "adam.m." + name, {n}, slot.m);
            put_array(os, "adam.v." + name, {n}, slot.v);
            put_array(os, "adam.t." + name, {1}, {static_cast<float>(slot.steps)});
        }
        put_u64(os, static_cast<std::uint64_t>(st.iteration));
        put_string(os, rng_state(st.rng));
        std::ostringstream curve;
        write_curve(curve, st.curve);
        put_string(os, curve.str());
        if (!os) throw IoError("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place at " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    Reader r{is, path};
    char magic[5];
    r.read(magic, 5);
    if (std::memcmp(magic, kMagic, 5) != 0) throw FormatError(path + ": not a checkpoint (bad magic)");
    std::uint8_t version;
    r.read(&version, 1);
    if (version != kVersion) throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::string cfg = r.str();
    const auto acfg = agent::AgentConfig::parse(section(cfg, "agent"));
    const auto tcfg = TrainConfig::parse(section(cfg, "train"));
    TrainState st = init_state(agent::Agent(acfg, 0), tcfg);
    const std::string run = section(cfg, "run");
    const auto cmd = run.find("cmd=");
    if (cmd != std::string::npos) st.command = run.substr(cmd + 4, run.find('\n', cmd) - cmd - 4);

    auto& ps = st.agent.params();
    const std::uint32_t n = r.u32();
    if (n != ps.size()) throw FormatError(path + ": parameter count does not match the agent config");
    for (std::uint32_t i = 0; i < n; ++i) {
        auto a = r.array();
        if (!ps.contains(a.name)) throw FormatError(path + ": unknown parameter " + a.name);
        auto& t = ps.get(a.name);
        if (a.dims != t.dims()) throw FormatError(path + ": shape mismatch for " + a.name);
        t.values() = std::move(a.values);
    }
    const std::uint32_t m = r.u32();
    if (m % 3 != 0) throw FormatError(path + ": optimizer arrays are not in triples");
    auto& slots = st.adam.slots();
    for (std::uint32_t i = 0; i < m; ++i) {
        auto a = r.array();
        const auto tag = a.name.substr(0, 7);
        const auto name = a.name.size() > 7 ? a.name.substr(7) : "";
        if (!ps.contains(name)) throw FormatError(path + ": optimizer state for unknown parameter " + a.name);
        auto& slot = slots[name];
        if (tag == "adam.m.") slot.m = std::move(a.values);
        else if (tag == "adam.v.") slot.v = std::move(a.values);
        else if (tag == "adam.t." && a.values.size() == 1) slot.steps = static_cast<std::uint32_t>(a.values[0]);
        else throw FormatError(path + ": unknown optimizer array " + a.name);
    }
    st.iteration = static_cast<int>(r.u64());
    set_rng_state(st.rng, r.str());
    std::istringstream curve(r.str());
    st.curve = read_curve(curve);
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after checkpoint");
    return st;
}

#define IMNAV_INSTANTIATE_LOSSES(T)                                                                              \
    template BasicVar<T> imitation_loss(const std::vector<BasicVar<T>>&, const std::vector<int>&);              \
    template AuxValue<T> cosine_alignment_loss(const std::vector<BasicVar<T>>&, const std::vector<BasicVar<T>>&); \
    template AuxValue<T> infonce_loss(const std::vector<BasicVar<T>>&, const std::vector<BasicVar<T>>&,         \
                                      const std::vector<int>&, double);                                         \
    template BasicVar<T> total_loss(BasicVar<T>, BasicVar<T>, double);

IMNAV_INSTANTIATE_LOSSES(float)
IMNAV_INSTANTIATE_LOSSES(double)

}  // namespace imnav::train
