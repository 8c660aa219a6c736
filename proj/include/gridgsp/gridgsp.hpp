#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/detect.hpp"
#include "gridgsp/gridsim.hpp"
#include "gridgsp/gsp.hpp"
#include "gridgsp/harness.hpp"
#include "gridgsp/spectral.hpp"
#include "gridgsp/threat.hpp"
#include "gridgsp/topology.hpp"
