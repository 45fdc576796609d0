#ifndef GLOTDR_CORE_OPTIM_HPP
#define GLOTDR_CORE_OPTIM_HPP

#include "glotdr/core/tensor.hpp"

#include <cmath>
#include <string>

namespace glotdr {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment buffers mirror the flat parameter vector they were created for.
template <typename Scalar>
class Optimizer {
public:
    Optimizer(OptimizerSpec spec, Eigen::Index parameter_count)
        : spec_(spec), first_(VectorX<Scalar>::Zero(parameter_count)), second_(VectorX<Scalar>::Zero(parameter_count))
    {
    }

    const OptimizerSpec& spec() const { return spec_; }
    long steps() const { return steps_; }
    const VectorX<Scalar>& first_moment() const { return first_; }
    const VectorX<Scalar>& second_moment() const { return second_; }

    /// One update with learning rate `lr` (the schedule-adjusted rate).
    void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad, Scalar lr)
    {
        if (params.size() != first_.size() || grad.size() != first_.size())
            throw DimensionError("optimizer buffers do not match parameter shape");
        ++steps_;
        VectorX<Scalar> g = grad;
        if (spec_.weight_decay != 0.0)
            g += Scalar(spec_.weight_decay) * params;
        switch (spec_.kind) {
        case OptimizerKind::sgd_momentum:
            first_ = Scalar(spec_.momentum) * first_ + g;
            params -= lr * first_;
            break;
        case OptimizerKind::adam: {
            const Scalar b1(spec_.beta1), b2(spec_.beta2);
            first_ = b1 * first_ + (Scalar(1) - b1) * g;
            second_ = b2 * second_ + (Scalar(1) - b2) * g.cwiseAbs2();
            const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(steps_));
            const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(steps_));
            params.array() -= lr * (first_.array() / c1) / ((second_.array() / c2).sqrt() + Scalar(spec_.eps));
            break;
        }
        }
    }

private:
    OptimizerSpec spec_;
    VectorX<Scalar> first_;
    VectorX<Scalar> second_;
    long steps_ = 0;
};

} // namespace glotdr

#endif // GLOTDR_CORE_OPTIM_HPP
