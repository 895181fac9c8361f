#pragma once

#include "cbalance/approx.hpp"
#include "cbalance/core.hpp"
#include "cbalance/errors.hpp"
#include "cbalance/io.hpp"
#include "cbalance/normal.hpp"
#include "cbalance/parallel.hpp"
#include "cbalance/pseudo_p.hpp"
#include "cbalance/rng.hpp"
#include "cbalance/sampling.hpp"
#include "cbalance/simulation.hpp"
