#pragma once

#include "bult/aoa.hpp"
#include "bult/beamforming.hpp"
#include "bult/config.hpp"
#include "bult/crb.hpp"
#include "bult/errors.hpp"
#include "bult/gaussian.hpp"
#include "bult/geometry.hpp"
#include "bult/harness.hpp"
#include "bult/linalg.hpp"
#include "bult/signal.hpp"
#include "bult/tracker.hpp"
#include "bult/von_mises.hpp"
