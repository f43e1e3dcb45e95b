#pragma once

#include "rssfield/baseline.hpp"
#include "rssfield/bounds.hpp"
#include "rssfield/config.hpp"
#include "rssfield/empbayes.hpp"
#include "rssfield/error.hpp"
#include "rssfield/experiment.hpp"
#include "rssfield/gp.hpp"
#include "rssfield/io.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/localize.hpp"
#include "rssfield/metrics.hpp"
#include "rssfield/model.hpp"
#include "rssfield/optimize.hpp"
#include "rssfield/recursive.hpp"
#include "rssfield/rng.hpp"
#include "rssfield/synth.hpp"
