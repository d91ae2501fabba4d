#pragma once

#include "hdrnerf/autodiff.hpp"
#include "hdrnerf/calib.hpp"
#include "hdrnerf/checkpoint.hpp"
#include "hdrnerf/dataset.hpp"
#include "hdrnerf/encoding.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/geometry.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/image_io.hpp"
#include "hdrnerf/metrics.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/parallel.hpp"
#include "hdrnerf/render.hpp"
#include "hdrnerf/rng.hpp"
#include "hdrnerf/synth.hpp"
#include "hdrnerf/train.hpp"
