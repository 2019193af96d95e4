#pragma once

#include "bumps.hpp"
#include "config.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "harness.hpp"
#include "incidence.hpp"
#include "localization.hpp"
#include "packets.hpp"
#include "rescale.hpp"
#include "spectral.hpp"
