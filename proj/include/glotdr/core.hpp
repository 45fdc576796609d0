#ifndef GLOTDR_CORE_HPP
#define GLOTDR_CORE_HPP

#include "glotdr/core/grad.hpp"
#include "glotdr/core/gradcheck.hpp"
#include "glotdr/core/losses.hpp"
#include "glotdr/core/network.hpp"
#include "glotdr/core/optim.hpp"
#include "glotdr/core/schedule.hpp"
#include "glotdr/core/tensor.hpp"

#endif // GLOTDR_CORE_HPP
