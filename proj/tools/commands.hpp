#pragma once

#include <ostream>

#include "run_config.hpp"

namespace dfd::cli {

void run_simulate(const RunConfig& cfg);
void run_reconstruct(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_train_prior(const RunConfig& cfg);
void run_psf_inspect(const RunConfig& cfg, std::ostream& os);
void run_psf_rescale(const RunConfig& cfg);
void run_psf_calibrate(const RunConfig& cfg);

}  // namespace dfd::cli
