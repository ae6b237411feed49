#pragma once

#include <map>
#include <string>
#include <vector>

#include "imnav/numcore/tensor.hpp"

namespace imnav::nc {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moments and step counts. A parameter whose group
// learning rate is zero is skipped entirely: value, moments and count stay put.
class Adam {
public:
    struct Slot {
        std::vector<float> m;
        std::vector<float> v;
        std::uint32_t steps = 0;
    };

    explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

    void step(ParamStore& store, const std::map<Group, double>& group_lr);

    const AdamHyper& hyper() const { return hyper_; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    AdamHyper hyper_;
    std::map<std::string, Slot> slots_;
};

}  // namespace imnav::nc
