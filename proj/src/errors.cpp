#include "imitate/errors.hpp"

#include <sstream>

namespace imitate {

namespace {

std::string limit_message(std::size_t joint, double angle, double lo, double hi) {
    std::ostringstream os;
    os << "joint " << joint << " angle " << angle << " outside limits [" << lo << ", " << hi << "]";
    return os.str();
}

std::string residual_message(double residual) {
    std::ostringstream os;
    os << "inverse kinematics did not converge (best residual " << residual << ")";
    return os.str();
}

}  // namespace

LimitViolation::LimitViolation(std::size_t joint, double angle, double lo, double hi)
    : Error(limit_message(joint, angle, lo, hi)), joint_(joint) {}

NotConverged::NotConverged(double residual) : Error(residual_message(residual)), residual_(residual) {}

}  // namespace imitate
