#include "imnav/numcore/tensor.hpp"

#include <random>
#include <sstream>

#include "imnav/errors.hpp"

namespace imnav {

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw FormatError("malformed RNG state");
}

}  // namespace imnav

namespace imnav::nc {

namespace {

std::size_t product(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::uint32_t> dims, float fill)
    : dims_(std::move(dims)), values_(product(dims_), fill) {
    if (dims_.empty() || dims_.size() > 2) throw ShapeError("tensor rank must be 1 or 2");
}

Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<float> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
    if (dims_.empty() || dims_.size() > 2) throw ShapeError("tensor rank must be 1 or 2");
    if (values_.size() != product(dims_)) throw ShapeError("tensor values do not match shape");
}

int Tensor::rows() const { return dims_.size() == 2 ? static_cast<int>(dims_[0]) : 1; }

int Tensor::cols() const { return static_cast<int>(dims_.back()); }

void Tensor::ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0f);
}

void Tensor::zero_grad() { grad_.assign(values_.size(), 0.0f); }

const char* group_name(Group g) {
    switch (g) {
        case Group::imagination_encoder: return "imagination_encoder";
        case Group::type_embedding: return "type_embedding";
        case Group::base: return "base";
    }
    return "?";
}

Group parse_group(const std::string& name) {
    if (name == "imagination_encoder") return Group::imagination_encoder;
    if (name == "type_embedding") return Group::type_embedding;
    if (name == "base") return Group::base;
    throw FormatError("unknown parameter group '" + name + "'");
}

Tensor& ParamStore::add(const std::string& name, Group group, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, group, std::move(t)});
    return entries_.back().tensor;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

Group ParamStore::group_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
    return entries_[it->second].group;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

Tensor random_normal(int rows, int cols, double scale, Rng& rng) {
    Tensor t = Tensor::matrix(rows, cols);
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& v : t.values()) v = static_cast<float>(dist(rng));
    return t;
}

}  // namespace imnav::nc
