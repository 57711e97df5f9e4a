#ifndef KT_KT_HPP
#define KT_KT_HPP

#include "kt/baselines.hpp"
#include "kt/checkpoint.hpp"
#include "kt/datasets.hpp"
#include "kt/error.hpp"
#include "kt/eval.hpp"
#include "kt/harness.hpp"
#include "kt/models.hpp"
#include "kt/optim.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

#endif  // KT_KT_HPP
