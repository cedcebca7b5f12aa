#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mglow/config.hpp"
#include "mglow/model.hpp"
#include "mglow/nn.hpp"

namespace mglow {

// Model construction from a validated configuration. Parameters depend only
// on the configuration (run.seed included).
Manifold stream_manifold(const RunConfig& cfg, const std::string& side);  // side: "source" or "target"
int stream_channels(const RunConfig& cfg, const std::string& side);
FlowArch flow_arch(const RunConfig& cfg);
AdamConfig adam_config(const RunConfig& cfg);
ConditionalModel build_model(const RunConfig& cfg);

// Directory holding the synthetic dataset and its manifest.
std::string data_dir(const RunConfig& cfg);

// Paired coordinate fields in the model charts.
struct TrainingData {
  std::vector<CoordField> source;
  std::vector<CoordField> target;
  int size() const { return static_cast<int>(source.size()); }
};

// Reads the manifest entries of one split ("train", "test" or "all").
TrainingData load_split(const RunConfig& cfg, const ConditionalModel& model, const std::string& split);

// Sample indices of one minibatch; a pure function of (seed, step).
std::vector<int> batch_indices(std::uint64_t seed, long step, int n, int batch);

// Data-dependent actnorm initialization of both flows.
void initialize_model(ConditionalModel& model, const TrainingData& data, int init_batch, std::uint64_t seed);

struct StepStats {
  double loss = 0.0;  // mean total NLL over the samples used
  int used = 0;
  int skipped = 0;  // samples dropped after leaving a chart domain
  double grad_norm = 0.0;
  bool updated = false;
};

// One synchronous step: per-sample gradients in parallel, an ordered sum,
// global-norm clipping, and an Adam update. Samples whose forward pass leaves
// a chart domain are dropped; the step is skipped when every sample is.
// Throws NumericalError on a nonfinite loss or gradient, leaving the model untouched.
StepStats train_step(ConditionalModel& model, Adam& adam, const TrainingData& data, const std::vector<int>& batch,
                     double clip);

// Mean conditional NLL over a dataset (samples outside a chart domain are skipped).
double mean_nll(const ConditionalModel& model, const TrainingData& data);

}  // namespace mglow
