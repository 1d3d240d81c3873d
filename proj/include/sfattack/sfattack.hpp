#ifndef SFATTACK_SFATTACK_HPP
#define SFATTACK_SFATTACK_HPP

#include "sfattack/attacks.hpp"
#include "sfattack/autodiff.hpp"
#include "sfattack/error.hpp"
#include "sfattack/estimator.hpp"
#include "sfattack/gradcheck.hpp"
#include "sfattack/harness.hpp"
#include "sfattack/io.hpp"
#include "sfattack/ot.hpp"
#include "sfattack/pointcloud.hpp"
#include "sfattack/svg.hpp"
#include "sfattack/synthgen.hpp"
#include "sfattack/tensor.hpp"
#include "sfattack/tinynet.hpp"

#endif  // SFATTACK_SFATTACK_HPP
