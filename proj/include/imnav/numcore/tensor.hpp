#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "imnav/rng.hpp"

namespace imnav::nc {

// Dense row-major float tensor of rank 1 or 2. Rank-1 tensors behave as 1 x n.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::uint32_t> dims, float fill = 0.0f);
    Tensor(std::vector<std::uint32_t> dims, std::vector<float> values);

    static Tensor matrix(int rows, int cols, float fill = 0.0f) {
        return Tensor({static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)}, fill);
    }

    const std::vector<std::uint32_t>& dims() const { return dims_; }
    int rows() const;
    int cols() const;
    std::size_t size() const { return values_.size(); }

    std::vector<float>& values() { return values_; }
    const std::vector<float>& values() const { return values_; }
    float& operator[](std::size_t i) { return values_[i]; }
    float operator[](std::size_t i) const { return values_[i]; }
    float& at(int r, int c) { return values_[static_cast<std::size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols() + c]; }

    bool has_grad() const { return !grad_.empty(); }
    std::vector<float>& grad() { return grad_; }
    const std::vector<float>& grad() const { return grad_; }
    void ensure_grad();
    void zero_grad();
    void drop_grad() { grad_.clear(); }

    bool requires_grad = true;

private:
    std::vector<std::uint32_t> dims_;
    std::vector<float> values_;
    std::vector<float> grad_;
};

enum class Group { imagination_encoder, type_embedding, base };

const char* group_name(Group g);
Group parse_group(const std::string& name);

// Named parameters in insertion order; every tensor belongs to exactly one group.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Group group;
        Tensor tensor;
    };

    Tensor& add(const std::string& name, Group group, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Group group_of(const std::string& name) const;

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void zero_grad();
    std::size_t parameter_count() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Normal(0, scale) initialisation.
Tensor random_normal(int rows, int cols, double scale, Rng& rng);

}  // namespace imnav::nc
