#pragma once

#include "sqzforge/cavity.hpp"
#include "sqzforge/errors.hpp"
#include "sqzforge/fit.hpp"
#include "sqzforge/geometry.hpp"
#include "sqzforge/interpolate.hpp"
#include "sqzforge/keyvalue.hpp"
#include "sqzforge/material.hpp"
#include "sqzforge/models.hpp"
#include "sqzforge/modesolver.hpp"
#include "sqzforge/opo.hpp"
#include "sqzforge/parallel.hpp"
#include "sqzforge/phasematch.hpp"
#include "sqzforge/trace.hpp"
#include "sqzforge/units.hpp"
