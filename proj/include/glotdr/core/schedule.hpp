#ifndef GLOTDR_CORE_SCHEDULE_HPP
#define GLOTDR_CORE_SCHEDULE_HPP

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace glotdr {

enum class ScheduleKind { constant, cosine_annealing, step_decay, exp_rampup };

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::constant;
    int total_epochs = 1;          // cosine_annealing
    int rampup_length = 30;        // exp_rampup
    std::vector<int> decay_epochs; // step_decay milestones
    double decay_rate = 0.1;       // step_decay
};

/// Multiplicative factor applied at `epoch` (learning rate or trade-off weight).
inline double schedule_factor(const ScheduleSpec& spec, int epoch)
{
    if (epoch < 0)
        throw std::invalid_argument("epoch must be non-negative");
    switch (spec.kind) {
    case ScheduleKind::constant:
        return 1.0;
    case ScheduleKind::cosine_annealing: {
        if (spec.total_epochs <= 0 || epoch >= spec.total_epochs)
            return 0.0;
        return 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / spec.total_epochs));
    }
    case ScheduleKind::step_decay: {
        double f = 1.0;
        for (int milestone : spec.decay_epochs)
            if (epoch >= milestone)
                f *= spec.decay_rate;
        return f;
    }
    case ScheduleKind::exp_rampup: {
        if (spec.rampup_length <= 0 || epoch >= spec.rampup_length)
            return 1.0;
        const double t = 1.0 - static_cast<double>(epoch) / spec.rampup_length;
        return std::exp(-5.0 * t * t);
    }
    }
    return 1.0;
}

} // namespace glotdr

#endif // GLOTDR_CORE_SCHEDULE_HPP
