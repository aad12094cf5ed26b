#ifndef DRIFT_DRIFT_HPP
#define DRIFT_DRIFT_HPP

#include "drift/corpus_io.hpp"
#include "drift/correlation_study.hpp"
#include "drift/error.hpp"
#include "drift/geometry.hpp"
#include "drift/improvement_metrics.hpp"
#include "drift/loss_dynamics.hpp"
#include "drift/pipeline.hpp"
#include "drift/report.hpp"
#include "drift/repr_similarity.hpp"
#include "drift/scarce_classifiers.hpp"
#include "drift/synth.hpp"

#endif
