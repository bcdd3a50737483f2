#pragma once

#include "fbm_infoflow/channels.hpp"
#include "fbm_infoflow/doss.hpp"
#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/fbm.hpp"
#include "fbm_infoflow/fbm_stats.hpp"
#include "fbm_infoflow/identities.hpp"
#include "fbm_infoflow/infofunc.hpp"
#include "fbm_infoflow/montecarlo.hpp"
#include "fbm_infoflow/parallel.hpp"
#include "fbm_infoflow/quadrature.hpp"
#include "fbm_infoflow/rng.hpp"
#include "fbm_infoflow/sigma_model.hpp"
