#pragma once

#include "error.hpp"
#include "parallel.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "preavg.hpp"
#include "spot.hpp"
#include "spectral.hpp"
#include "functional.hpp"
#include "estimate.hpp"
#include "pca.hpp"
#include "sim.hpp"
#include "mc.hpp"
