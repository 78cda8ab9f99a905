#pragma once

#include <stdexcept>
#include <vector>

#include "proxkit/matrix.hpp"

namespace proxkit {

// Momentum SGD with decoupled weight decay. Velocity buffers align with the
// parameter list registered at construction.
class MomentumSgd {
public:
    MomentumSgd(std::vector<DenseMatrix*> params, double lr, double momentum = 0.9, double weight_decay = 0.0)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        velocity_.reserve(params_.size());
        for (const DenseMatrix* p : params_) velocity_.emplace_back(p->rows(), p->cols());
    }

    void set_lr(double lr) { lr_ = lr; }

    void step(const std::vector<const DenseMatrix*>& grads) {
        if (grads.size() != params_.size()) throw std::invalid_argument("MomentumSgd: gradient count mismatch");
        for (std::size_t k = 0; k < params_.size(); ++k) {
            DenseMatrix& p = *params_[k];
            DenseMatrix& v = velocity_[k];
            const DenseMatrix& g = *grads[k];
            require_same_shape(p, g, "MomentumSgd::step");
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double grad = g.data()[i] + weight_decay_ * p.data()[i];
                v.data()[i] = momentum_ * v.data()[i] + grad;
                p.data()[i] -= lr_ * v.data()[i];
            }
        }
    }

private:
    std::vector<DenseMatrix*> params_;
    std::vector<DenseMatrix> velocity_;
    double lr_;
    double momentum_;
    double weight_decay_;
};

}  // namespace proxkit
