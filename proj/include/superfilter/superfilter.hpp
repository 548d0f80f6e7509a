#pragma once

#include "superfilter/analysis.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/diversity.hpp"
#include "superfilter/embedding.hpp"
#include "superfilter/error.hpp"
#include "superfilter/logprobs.hpp"
#include "superfilter/prompt_template.hpp"
#include "superfilter/remote.hpp"
#include "superfilter/report.hpp"
#include "superfilter/scorer.hpp"
#include "superfilter/scoring.hpp"
#include "superfilter/selection.hpp"
