#pragma once

#include "gsde/checkpoint.hpp"
#include "gsde/config.hpp"
#include "gsde/error.hpp"
#include "gsde/fer.hpp"
#include "gsde/filters.hpp"
#include "gsde/guidance.hpp"
#include "gsde/heatmap_train.hpp"
#include "gsde/metrics.hpp"
#include "gsde/pgm.hpp"
#include "gsde/pipeline.hpp"
#include "gsde/random.hpp"
#include "gsde/sampler.hpp"
#include "gsde/schedule.hpp"
#include "gsde/score_net.hpp"
#include "gsde/synth.hpp"
#include "gsde/trainer.hpp"
