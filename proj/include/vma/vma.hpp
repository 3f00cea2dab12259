#pragma once

#include "vma/slse.hpp"
#include "vma/time_sim.hpp"
#include "vma/protocol.hpp"
#include "vma/trace_analysis.hpp"
#include "vma/fitting.hpp"
#include "vma/io.hpp"
#include "vma/sweep.hpp"
