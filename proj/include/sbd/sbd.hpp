#pragma once

#include "sbd/activation_store.hpp"
#include "sbd/analysis.hpp"
#include "sbd/code_set.hpp"
#include "sbd/feature_select.hpp"
#include "sbd/forest.hpp"
#include "sbd/logistic.hpp"
#include "sbd/metrics.hpp"
#include "sbd/model_io.hpp"
#include "sbd/pipeline.hpp"
#include "sbd/report_json.hpp"
#include "sbd/sae.hpp"
