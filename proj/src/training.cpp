#include "mglow/training.hpp"

#include <omp.h>

#include <cmath>
#include <exception>
#include <filesystem>
#include <numeric>

#include "mglow/data.hpp"
#include "mglow/errors.hpp"

namespace mglow {

Manifold stream_manifold(const RunConfig& cfg, const std::string& side) {
  const std::string kind = cfg.get(side + ".manifold");
  const int n = static_cast<int>(cfg.get_int(side + ".n"));
  const std::string chart = cfg.get(side + ".chart");
  if (kind == "positive_reals") return Manifold::positive_reals();
  if (kind == "sphere") {
    if (cfg.get(side + ".pole") == "uniform") return Manifold::sphere(VectorXd::Constant(n, 1.0));
    return Manifold::sphere(n);
  }
  return Manifold::spd(n, chart == "cholesky" ? ChartKind::Cholesky : ChartKind::MatrixLog);
}

int stream_channels(const RunConfig& cfg, const std::string& side) {
  // Textures are three positive channels; everything else is one field.
  return cfg.get("data.generator") == "texture" && side == "target" ? 3 : 1;
}

FlowArch flow_arch(const RunConfig& cfg) {
  FlowArch a;
  a.levels = static_cast<int>(cfg.get_int("arch.levels"));
  a.blocks_per_level = static_cast<int>(cfg.get_int("arch.blocks_per_level"));
  a.squeeze = cfg.get_bool("arch.squeeze");
  a.coupling.mode = cfg.get("arch.coupling") == "slice" ? CouplingMode::Slice : CouplingMode::Channel;
  a.coupling.tau = static_cast<int>(cfg.get_int("arch.tau"));
  a.coupling.shared = cfg.get_bool("arch.share");
  a.coupling.hidden = cfg.get_int_list("arch.hidden");
  a.coupling.scale_bound = cfg.get_real("arch.scale_bound");
  a.actnorm_per_location = cfg.get("arch.actnorm") == "location";
  a.conv_init = cfg.get_real("arch.conv_init");
  a.sigma0 = cfg.get_real("arch.sigma0");
  return a;
}

AdamConfig adam_config(const RunConfig& cfg) {
  AdamConfig a;
  a.lr = cfg.get_real("optim.lr");
  a.beta1 = cfg.get_real("optim.beta1");
  a.beta2 = cfg.get_real("optim.beta2");
  a.eps = cfg.get_real("optim.eps");
  return a;
}

ConditionalModel build_model(const RunConfig& cfg) {
  const std::uint64_t seed = cfg.get_u64("run.seed");
  const Extents grid = cfg.get_grid("data.grid");
  const FlowArch arch = flow_arch(cfg);
  ConditionalModel m;
  m.source = FlowModel(stream_manifold(cfg, "source"), grid, stream_channels(cfg, "source"), arch,
                       derive_seed(seed, 101));
  m.target = FlowModel(stream_manifold(cfg, "target"), grid, stream_channels(cfg, "target"), arch,
                       derive_seed(seed, 102));
  TransferArch ta;
  ta.hidden = static_cast<int>(cfg.get_int("arch.transfer_hidden"));
  ta.blocks = static_cast<int>(cfg.get_int("arch.transfer_blocks"));
  m.transfer = LatentTransfer(m.source, m.target, ta, derive_seed(seed, 103));
  m.source_weight = cfg.get_real("train.source_weight");
  m.target_weight = cfg.get_real("train.target_weight");
  m.detach_source = cfg.get_bool("train.detach_source");
  m.boundary_weight = cfg.get_real("train.boundary_weight");
  m.boundary_fraction = cfg.get_real("train.boundary_fraction");
  return m;
}

std::string data_dir(const RunConfig& cfg) {
  const std::string d = cfg.get("data.dir");
  return d.empty() ? (std::filesystem::path(cfg.get("run.out")) / "data").string() : d;
}

TrainingData load_split(const RunConfig& cfg, const ConditionalModel& model, const std::string& split) {
  const std::filesystem::path dir = data_dir(cfg);
  TrainingData d;
  for (const auto& e : read_manifest((dir / "manifest.tsv").string())) {
    if (split != "all" && e.split != split) continue;
    const Field src = rechart(read_field((dir / e.source).string()), model.source.manifold());
    const Field tgt = rechart(read_field((dir / e.target).string()), model.target.manifold());
    if (src.extents() != model.source.extents() || src.channels() != model.source.channels())
      throw ShapeError("source field " + e.source + " does not match the configured grid");
    if (tgt.extents() != model.target.extents() || tgt.channels() != model.target.channels())
      throw ShapeError("target field " + e.target + " does not match the configured grid");
    d.source.push_back(to_coords(src));
    d.target.push_back(to_coords(tgt));
  }
  return d;
}

std::vector<int> batch_indices(std::uint64_t seed, long step, int n, int batch) {
  Rng rng(derive_seed(derive_seed(seed, 0xBA7C), static_cast<std::uint64_t>(step)));
  std::vector<int> out(batch);
  for (auto& i : out) i = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
  return out;
}

void initialize_model(ConditionalModel& model, const TrainingData& data, int init_batch, std::uint64_t seed) {
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x1417));
  for (int i = data.size() - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  order.resize(std::min<size_t>(order.size(), static_cast<size_t>(init_batch)));
  std::vector<CoordField> src, tgt;
  for (int i : order) {
    src.push_back(data.source[i]);
    tgt.push_back(data.target[i]);
  }
  model.source.initialize(src);
  model.target.initialize(tgt);
  std::vector<std::vector<CoordField>> latents;
  for (const auto& t : tgt) latents.push_back(model.target.forward(t).latents);
  model.transfer.initialize(latents);
}

StepStats train_step(ConditionalModel& model, Adam& adam, const TrainingData& data, const std::vector<int>& batch,
                     double clip) {
  const int b = static_cast<int>(batch.size());
  std::vector<VectorXd> grads(b);
  std::vector<double> losses(b, 0.0);
  std::vector<char> ok(b, 0);
  std::vector<std::exception_ptr> errors(b);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    try {
      ConditionalModel g = model.zeros_like();
      losses[i] = conditional_loss_grad(model, data.target[batch[i]], data.source[batch[i]], &g).total;
      grads[i] = flatten_params(g);
      ok[i] = 1;
    } catch (const ChartDomainError&) {
      ok[i] = 0;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  StepStats st;
  VectorXd total;
  for (int i = 0; i < b; ++i) {
    if (!ok[i]) {
      ++st.skipped;
      continue;
    }
    if (total.size() == 0) total = VectorXd::Zero(grads[i].size());
    total += grads[i];
    st.loss += losses[i];
    ++st.used;
  }
  if (st.used == 0) return st;
  st.loss /= st.used;
  total /= st.used;
  if (!std::isfinite(st.loss)) throw NumericalError("training loss is not finite");
  if (!total.allFinite()) throw NumericalError("training gradient is not finite");
  st.grad_norm = clip_global_norm(total, clip);
  VectorXd params = flatten_params(model);
  adam.step(params, total);
  unflatten_params(model, params);
  st.updated = true;
  return st;
}

double mean_nll(const ConditionalModel& model, const TrainingData& data) {
  std::vector<double> v(data.size(), 0.0);
  std::vector<char> ok(data.size(), 0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < data.size(); ++i) {
    try {
      const ConditionalLoss l = conditional_nll(model, data.target[i], data.source[i]);
      v[i] = l.total - l.boundary;
      ok[i] = 1;
    } catch (const ChartDomainError&) {
    }
  }
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < data.size(); ++i)
    if (ok[i]) {
      s += v[i];
      ++n;
    }
  return n ? s / n : std::nan("");
}

}  // namespace mglow
