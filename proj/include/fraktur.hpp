#pragma once

#include "fraktur/config.hpp"
#include "fraktur/csv.hpp"
#include "fraktur/enricher.hpp"
#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/evaluator.hpp"
#include "fraktur/gateway.hpp"
#include "fraktur/http_provider.hpp"
#include "fraktur/image.hpp"
#include "fraktur/job.hpp"
#include "fraktur/merger.hpp"
#include "fraktur/metrics.hpp"
#include "fraktur/payload.hpp"
#include "fraktur/prompts.hpp"
#include "fraktur/server.hpp"
#include "fraktur/tei.hpp"
#include "fraktur/text.hpp"
#include "fraktur/tiler.hpp"
#include "fraktur/usage.hpp"
