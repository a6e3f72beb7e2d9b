#pragma once

#include "kicktop/errors.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/parallel.hpp"
#include "kicktop/spin_core.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/hp_gaussian.hpp"
#include "kicktop/classical_kt.hpp"
#include "kicktop/atom_light.hpp"
#include "kicktop/analysis/metrics.hpp"
#include "kicktop/analysis/engines.hpp"
#include "kicktop/analysis/config.hpp"
#include "kicktop/analysis/io.hpp"
#include "kicktop/analysis/drivers.hpp"
