#ifndef RKM_RKM_HPP
#define RKM_RKM_HPP

#include "rkm/coords.hpp"
#include "rkm/errors.hpp"
#include "rkm/keypoints.hpp"
#include "rkm/metrics.hpp"
#include "rkm/objective.hpp"
#include "rkm/parallel.hpp"
#include "rkm/phantom.hpp"
#include "rkm/solvers.hpp"
#include "rkm/volio.hpp"
#include "rkm/volume.hpp"
#include "rkm/warp.hpp"

#endif
