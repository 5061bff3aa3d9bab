#include "lsda/optim.hpp"

#include <cmath>

#include "lsda/error.hpp"

namespace lsda {

Adam::Adam(std::vector<Parameter*> params, Options options) : params_(std::move(params)), options_(options) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->grad.fill(0.0);
}

void Adam::step() {
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            p.value[j] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
        }
    }
}

std::map<std::string, std::pair<Tensor, Tensor>> Adam::state() const {
    std::map<std::string, std::pair<Tensor, Tensor>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace(params_[i]->name, std::make_pair(m_[i], v_[i]));
    }
    return out;
}

void Adam::load_state(const std::map<std::string, std::pair<Tensor, Tensor>>& moments, std::uint64_t t) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto it = moments.find(params_[i]->name);
        require(it != moments.end(), ErrorKind::CorruptCheckpoint,
                "optimizer state missing for parameter " + params_[i]->name);
        require(it->second.first.same_shape(m_[i]) && it->second.second.same_shape(v_[i]),
                ErrorKind::CorruptCheckpoint, "optimizer state shape mismatch for " + params_[i]->name);
        m_[i] = it->second.first;
        v_[i] = it->second.second;
    }
    t_ = t;
}

}  // namespace lsda
