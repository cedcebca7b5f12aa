#include "mglow/commands.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "mglow/check.hpp"
#include "mglow/checkpoint.hpp"
#include "mglow/data.hpp"
#include "mglow/errors.hpp"
#include "mglow/eval.hpp"
#include "mglow/training.hpp"

namespace fs = std::filesystem;

namespace mglow {

namespace {

void prepare(const RunConfig& cfg, const fs::path& dir, const std::string& command) {
  cfg.validate();
  if (cfg.get_int("run.threads") > 0) omp_set_num_threads(static_cast<int>(cfg.get_int("run.threads")));
  fs::create_directories(dir);
  write_file_atomic((dir / ("config." + command + ".yaml")).string(), cfg.to_yaml());
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

// Keeps the metrics lines of steps <= last_step.
void truncate_metrics(const fs::path& path, long last_step) {
  std::string kept;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const long step = std::strtol(line.c_str(), nullptr, 10);
    if (step >= 1 && step <= last_step) kept += line + "\n";
  }
  in.close();
  write_file_atomic(path.string(), kept);
}

fs::path checkpoint_path(const RunConfig& cfg) {
  const std::string c = cfg.get("gen.checkpoint");
  return c.empty() ? fs::path(cfg.get("run.out")) / "checkpoint.ckpt" : fs::path(c);
}

ConditionalModel load_model(const RunConfig& cfg) {
  ConditionalModel model = build_model(cfg);
  restore_checkpoint(load_checkpoint(checkpoint_path(cfg).string()), model);
  return model;
}

}  // namespace

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = data_dir(cfg);
  prepare(cfg, dir, "synth");
  const Extents grid = cfg.get_grid("data.grid");
  const int count = static_cast<int>(cfg.get_int("data.count"));
  const std::uint64_t seed = cfg.get_u64("data.seed");
  PairedDataset ds;
  if (cfg.get("data.generator") == "paired") {
    PairedOptions opt;
    opt.spd.smoothness = cfg.get_real("data.smoothness");
    opt.spd.spread = cfg.get_real("data.spread");
    opt.noise = cfg.get_real("data.noise");
    opt.plant.enabled = cfg.get_bool("data.plant");
    opt.plant.anisotropy_effect = opt.plant.scale_effect = cfg.get_real("data.plant_effect");
    opt.target_pole = cfg.get("target.pole");
    ds = synth_paired(seed, grid, count, static_cast<int>(cfg.get_int("target.n")), opt);
  } else {
    ds = synth_texture_pair(seed, grid, count);
  }
  const auto [train, test] = split_dataset(count, cfg.get_real("data.train_fraction"), seed);
  std::vector<std::string> split(count, "test");
  for (int i : train) split[i] = "train";
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    ManifestEntry e;
    e.index = i;
    e.split = split[i];
    e.group = ds.pairs[i].group;
    e.source = "pair_" + index_name(i) + "_source.mfld";
    e.target = "pair_" + index_name(i) + "_target.mfld";
    write_field((dir / e.source).string(), ds.pairs[i].source);
    write_field((dir / e.target).string(), ds.pairs[i].target);
    entries.push_back(e);
  }
  write_manifest((dir / "manifest.tsv").string(), entries);
  log << "synth: wrote " << 2 * count << " fields (" << train.size() << " train, " << test.size() << " test) to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& resume, std::ostream& log) {
  const fs::path out = cfg.get("run.out");
  prepare(cfg, out, "train");
  const std::uint64_t seed = cfg.get_u64("run.seed");
  ConditionalModel model = build_model(cfg);
  const TrainingData data = load_split(cfg, model, "train");
  if (data.size() == 0) throw ValidationError("no training samples in " + data_dir(cfg));
  Adam adam(adam_config(cfg), static_cast<Eigen::Index>(model.param_count()));
  long step = 0;
  const fs::path metrics = out / "metrics.log", timing = out / "timing.log", ckpt = out / "checkpoint.ckpt";
  if (!resume.empty()) {
    const Checkpoint c = load_checkpoint(resume);
    restore_checkpoint(c, model, &adam);
    step = c.step;
    truncate_metrics(metrics, step);
    truncate_metrics(timing, step);
    log << "train: resumed from " << resume << " at step " << step << "\n";
  } else {
    initialize_model(model, data, static_cast<int>(cfg.get_int("train.init_batch")), seed);
    write_file_atomic(metrics.string(), "");
    write_file_atomic(timing.string(), "");
  }

  const long steps = cfg.get_int("train.steps");
  const int batch = static_cast<int>(cfg.get_int("train.batch"));
  const long every = cfg.get_int("train.checkpoint_every");
  const double clip = cfg.get_real("optim.clip");
  const std::string cfg_yaml = cfg.to_yaml();
  std::ofstream mlog(metrics, std::ios::app), tlog(timing, std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  long skipped_steps = 0;
  double last = std::nan("");
  while (step < steps) {
    const long s = step + 1;
    StepStats st;
    try {
      st = train_step(model, adam, data, batch_indices(seed, s, data.size(), batch), clip);
    } catch (const NumericalError& e) {
      save_checkpoint(ckpt.string(), make_checkpoint(model, adam, step, cfg_yaml));
      log << "train: numerical abort at step " << s << ": " << e.what() << "; last good checkpoint at step " << step
          << " kept in " << ckpt.string() << "\n";
      return kExitNumerical;
    }
    step = s;
    if (!st.updated) ++skipped_steps;
    last = st.loss;
    mlog << s << "\t" << (st.used ? format_real(st.loss) : std::string("skipped")) << "\n";
    mlog.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    tlog << s << "\t" << secs << "\n";
    if (every > 0 && s % every == 0 && s < steps)
      save_checkpoint(ckpt.string(), make_checkpoint(model, adam, step, cfg_yaml));
  }
  save_checkpoint(ckpt.string(), make_checkpoint(model, adam, step, cfg_yaml));
  log << "train: " << step << " steps, last batch nll " << last << ", " << skipped_steps
      << " steps skipped at chart boundaries, checkpoint " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const fs::path out = fs::path(cfg.get("run.out")) / "generated";
  cfg.validate();
  ConditionalModel model = load_model(cfg);
  prepare(cfg, out, "generate");
  const fs::path dir = data_dir(cfg);
  const std::string split = cfg.get("gen.split");
  const double temperature = cfg.get_real("gen.temperature");
  const int repeats = static_cast<int>(cfg.get_int("gen.repeats"));
  const std::uint64_t seed = cfg.get_u64("run.seed");

  std::vector<ManifestEntry> entries;
  for (const auto& e : read_manifest((dir / "manifest.tsv").string()))
    if (split == "all" || e.split == split) entries.push_back(e);

  const int n = static_cast<int>(entries.size());
  std::vector<std::vector<Field>> fields(n);
  std::vector<std::vector<std::uint64_t>> seeds(n);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < repeats; ++r)
      seeds[i].push_back(derive_seed(derive_seed(seed, 0x6E4 + static_cast<std::uint64_t>(r)),
                                     static_cast<std::uint64_t>(entries[i].index)));
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const Field src = rechart(read_field((dir / entries[i].source).string()), model.source.manifold());
      for (int r = 0; r < repeats; ++r)
        fields[i].push_back(generate_conditional(model, src, temperature, seeds[i][r]));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  nlohmann::json side;
  side["checkpoint"] = checkpoint_path(cfg).string();
  side["data_dir"] = dir.string();
  side["seed"] = seed;
  side["temperature"] = temperature;
  side["repeats"] = repeats;
  side["split"] = split;
  side["samples"] = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    nlohmann::json s;
    s["index"] = entries[i].index;
    s["split"] = entries[i].split;
    s["group"] = std::string(1, entries[i].group);
    s["source"] = entries[i].source;
    s["reference"] = entries[i].target;
    s["files"] = nlohmann::json::array();
    s["seeds"] = seeds[i];
    for (int r = 0; r < repeats; ++r) {
      const std::string name = "gen_" + index_name(entries[i].index) + "_r" + std::to_string(r) + ".mfld";
      write_field((out / name).string(), fields[i][r]);
      s["files"].push_back(name);
    }
    side["samples"].push_back(s);
  }
  write_file_atomic((out / "generation.json").string(), side.dump(2) + "\n");
  log << "generate: " << n << " subjects x " << repeats << " samples at temperature " << temperature << " in "
      << out.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const fs::path run = cfg.get("run.out");
  const fs::path gen_dir = run / "generated", out = run / "eval";
  prepare(cfg, out, "eval");
  const nlohmann::json side = nlohmann::json::parse(read_file((gen_dir / "generation.json").string()));
  const fs::path dir = side.at("data_dir").get<std::string>();

  // Aligned sets: generated repeats, references and sources per subject.
  std::vector<std::vector<Field>> generated;
  std::vector<Field> refs, sources;
  std::vector<char> groups;
  for (const auto& s : side.at("samples")) {
    std::vector<Field> g;
    for (const auto& f : s.at("files")) g.push_back(read_field((gen_dir / f.get<std::string>()).string()));
    refs.push_back(read_field((dir / s.at("reference").get<std::string>()).string()));
    sources.push_back(read_field((dir / s.at("source").get<std::string>()).string()));
    groups.push_back(s.at("group").get<std::string>().at(0));
    for (auto& f : g) {
      if (f.extents() != refs.back().extents() || f.channels() != refs.back().channels() ||
          f.manifold().kind() != refs.back().manifold().kind() || f.manifold().n() != refs.back().manifold().n())
        throw ShapeError("generated field for subject " + std::to_string(s.at("index").get<int>()) +
                         " does not align with its reference");
      f = rechart(f, refs.back().manifold());
    }
    generated.push_back(std::move(g));
  }
  const int n = static_cast<int>(refs.size());
  if (n == 0) throw ValidationError("nothing to evaluate in " + gen_dir.string());
  const int repeats = static_cast<int>(generated[0].size());
  for (const auto& g : generated)
    if (static_cast<int>(g.size()) != repeats) throw ShapeError("subjects have different repeat counts");

  // Reconstruction error, averaged over repeats, and the Frechet-mean baseline.
  std::vector<double> recon(n, 0.0), baseline(n, 0.0);
  std::vector<Field> train_targets;
  for (const auto& e : read_manifest((dir / "manifest.tsv").string()))
    if (e.split == "train") train_targets.push_back(rechart(read_field((dir / e.target).string()), refs[0].manifold()));
  const bool have_baseline = !train_targets.empty();
  const Field mean_field = have_baseline ? frechet_mean_field(train_targets) : refs[0];
  MatrixXd conf = MatrixXd::Zero(n, n);
  for (int r = 0; r < repeats; ++r) {
    std::vector<Field> gr;
    for (int i = 0; i < n; ++i) gr.push_back(generated[i][r]);
    conf += confusion_matrix(gr, refs);
  }
  conf /= repeats;
  for (int i = 0; i < n; ++i) {
    recon[i] = conf(i, i);
    if (have_baseline) baseline[i] = reconstruction_error(mean_field, refs[i]);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  const double recon_mean = mean(recon), baseline_mean = mean(baseline);
  const double ratio = have_baseline && baseline_mean > 0 ? recon_mean / baseline_mean : std::nan("");

  // Diagonal dominance, over random k-subsets when eval.k is set.
  const int k = static_cast<int>(cfg.get_int("eval.k"));
  double dom = dominance(conf);
  if (k > 0 && k < n) {
    Rng rng(derive_seed(cfg.get_u64("run.seed"), 0xD0));
    const int subsets = static_cast<int>(cfg.get_int("eval.subsets"));
    double acc = 0.0;
    for (int s = 0; s < subsets; ++s) {
      std::vector<int> idx(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);
      MatrixXd sub(k, k);
      for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) sub(a, b) = conf(idx[a], idx[b]);
      acc += dominance(sub);
    }
    dom = acc / subsets;
  }

  nlohmann::json report;
  report["subjects"] = n;
  report["repeats"] = repeats;
  report["seed"] = side.at("seed");
  report["temperature"] = side.at("temperature");
  report["reconstruction_error"] = recon;
  report["reconstruction_error_mean"] = recon_mean;
  report["baseline_error"] = baseline;
  report["baseline_error_mean"] = baseline_mean;
  report["reconstruction_ratio"] = have_baseline ? nlohmann::json(ratio) : nlohmann::json(nullptr);
  report["dominance"] = dom;
  report["dominance_full"] = dominance(conf);

  // Group analysis when both groups have at least two members.
  std::vector<Field> ref_a, ref_b, gen_a, gen_b, src_a, src_b;
  for (int i = 0; i < n; ++i) {
    (groups[i] == 'A' ? ref_a : ref_b).push_back(refs[i]);
    (groups[i] == 'A' ? gen_a : gen_b).push_back(generated[i][0]);
    (groups[i] == 'A' ? src_a : src_b).push_back(sources[i]);
  }
  if (ref_a.size() >= 2 && ref_b.size() >= 2) {
    const int n_perm = static_cast<int>(cfg.get_int("eval.n_perm"));
    const double alpha = cfg.get_real("eval.alpha");
    const bool bh = cfg.get_bool("eval.bh");
    const std::uint64_t pseed = derive_seed(cfg.get_u64("run.seed"), 0x9E);
    const auto p_truth = permutation_test(ref_a, ref_b, n_perm, pseed);
    const auto p_gen = permutation_test(gen_a, gen_b, n_perm, pseed);
    const auto p_src = permutation_test(src_a, src_b, n_perm, pseed);
    const auto s_truth = significant(p_truth, alpha, bh);
    nlohmann::json g;
    g["n_perm"] = n_perm;
    g["alpha"] = alpha;
    g["bh"] = bh;
    g["iou_generated_vs_truth"] = iou(significant(p_gen, alpha, bh), s_truth);
    g["iou_source_vs_truth"] = iou(significant(p_src, alpha, bh), s_truth);
    g["p_truth"] = p_truth;
    g["p_generated"] = p_gen;
    g["p_source"] = p_src;
    if (cfg.get("data.generator") == "paired" && cfg.get_bool("data.plant")) {
      // Recovery of the target-visible plant: power inside it, calm outside it.
      const auto mask = planted_anisotropy_mask(refs[0].extents());
      auto summary = [&](const std::vector<double>& p) {
        std::vector<double> bg;
        int hit = 0, planted = 0;
        for (size_t v = 0; v < p.size(); ++v) {
          if (mask[v]) {
            ++planted;
            hit += p[v] < 0.01;
          } else {
            bg.push_back(p[v]);
          }
        }
        std::sort(bg.begin(), bg.end());
        const size_t h = bg.size() / 2;
        const double med = bg.empty() ? std::nan("") : (bg.size() % 2 ? bg[h] : 0.5 * (bg[h - 1] + bg[h]));
        return nlohmann::json{{"planted_fraction_below_0.01", planted ? double(hit) / planted : 0.0},
                              {"background_median_p", med}};
      };
      g["plant_truth"] = summary(p_truth);
      g["plant_generated"] = summary(p_gen);
    }
    report["group_analysis"] = g;
    const Extents grid = refs[0].extents();
    for (const auto& [name, p] : {std::pair{"p_truth", &p_truth}, {"p_generated", &p_gen}, {"p_source", &p_src}}) {
      Field vol(Manifold::positive_reals(), grid, 1);
      for (int v = 0; v < vol.points(); ++v) vol.point(v)[0] = (*p)[v];
      write_field((out / (std::string(name) + ".mfld")).string(), vol);
    }
  }

  const double dom_thr = cfg.get_real("eval.dominance_threshold");
  const double ratio_thr = cfg.get_real("eval.recon_ratio_threshold");
  const bool dom_ok = dom >= dom_thr;
  const bool ratio_ok = !have_baseline || ratio <= ratio_thr;
  report["thresholds"] = {{"dominance", {{"required", dom_thr}, {"pass", dom_ok}}},
                          {"reconstruction_ratio", {{"required", ratio_thr}, {"pass", ratio_ok}}}};

  write_file_atomic((out / "report.json").string(), report.dump(2) + "\n");
  write_file_atomic((out / "confusion.mat").string(), encode_matrix(conf));
  write_file_atomic((out / "confusion.svg").string(), heatmap_svg(conf, "reconstruction error, generated x reference"));
  write_file_atomic((out / "reconstruction.svg").string(), histogram_svg(recon, 20, "reconstruction error"));
  log << "eval: " << n << " subjects, mean reconstruction error " << recon_mean;
  if (have_baseline) log << " (baseline " << baseline_mean << ", ratio " << ratio << ")";
  log << ", dominance " << dom << "\n";
  if (!dom_ok || !ratio_ok) {
    log << "eval: threshold failed:" << (dom_ok ? "" : " dominance") << (ratio_ok ? "" : " reconstruction_ratio")
        << "\n";
    return kExitThreshold;
  }
  return kExitOk;
}

int cmd_check(const RunConfig& cfg, std::ostream& log) {
  prepare(cfg, cfg.get("run.out"), "check");
  const Fault fault = cfg.get("check.fault") == "no_scale_clamp" ? Fault::NoScaleClamp : Fault::None;
  bool ok = true;
  for (const auto& r : run_checks(cfg.get_u64("run.seed"), fault)) {
    log << format_check(r) << "\n";
    ok = ok && r.pass;
  }
  return ok ? kExitOk : kExitThreshold;
}

int run_command(const std::string& name, const RunConfig& cfg, const std::string& resume, std::ostream& log) {
  if (name == "synth") return cmd_synth(cfg, log);
  if (name == "train") return cmd_train(cfg, resume, log);
  if (name == "generate") return cmd_generate(cfg, log);
  if (name == "eval") return cmd_eval(cfg, log);
  if (name == "check") return cmd_check(cfg, log);
  throw ValidationError("unknown command '" + name + "' (expected synth, train, generate, eval or check)");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const Error*>(&e)) return kExitValidation;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kExitValidation;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitValidation;
  return kExitFailure;
}

}  // namespace mglow
