#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsda/autograd.hpp"

namespace lsda {

/// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
public:
    struct Options {
        double learning_rate = 2e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(std::vector<Parameter*> params, Options options);

    void zero_grad();
    void step();

    std::uint64_t step_count() const noexcept { return t_; }
    const Options& options() const noexcept { return options_; }
    const std::vector<Parameter*>& parameters() const noexcept { return params_; }

    // Moment buffers keyed by parameter name, for checkpointing.
    std::map<std::string, std::pair<Tensor, Tensor>> state() const;
    void load_state(const std::map<std::string, std::pair<Tensor, Tensor>>& moments, std::uint64_t t);

private:
    std::vector<Parameter*> params_;
    Options options_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace lsda
