#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "transnet/evalkit/evaluate.hpp"
#include "transnet/metatrain/model.hpp"
#include "transnet/numkit/checkpoint.hpp"

namespace transnet::metatrain {

namespace fs = std::filesystem;

inline constexpr const char* kStepTensor = "meta-step";

// Transfer is in effect for a model that has completed `steps` outer steps.
inline bool transfer_active(const TrainConfig& cfg, std::size_t steps) {
  return cfg.transfer && warmup_schedule(steps, cfg);
}

inline nk::NamedTensors snapshot(const Model& m) {
  nk::NamedTensors out;
  for (const auto& [name, t] : m.named()) out.emplace_back(name, t.clone());
  return out;
}

inline void save_model(const fs::path& path, const nk::NamedTensors& params, std::size_t steps,
                       const nk::AdamState* adam = nullptr) {
  nk::NamedTensors out = params;
  if (adam) nk::append_adam_state(out, params, *adam);
  out.emplace_back(kStepTensor, Tensor::scalar(static_cast<double>(steps)));
  nk::write_checkpoint(path, out);
}

struct LoadedModel {
  Model model;
  std::size_t steps = 0;
};

// Shapes come from the bundle and config; values from the checkpoint.
inline LoadedModel load_model(const fs::path& path, const DatasetBundle& bundle, TrainConfig cfg) {
  const auto saved = nk::read_checkpoint(path);
  cfg.transe_epochs = 0;
  std::mt19937_64 rng(cfg.seed);
  LoadedModel out{init_model(bundle, cfg, rng), 0};
  out.model.load(saved);
  if (const Tensor* s = nk::find_tensor(saved, kStepTensor)) out.steps = static_cast<std::size_t>(s->item());
  return out;
}

struct TrainOptions {
  std::optional<fs::path> out_dir;
  std::ostream* warnings = &std::cerr;
};

struct TrainResult {
  Model model;  // best validation MRR, or the final model without validation
  std::size_t steps = 0;
  std::size_t model_steps = 0;  // steps completed by `model`
  double best_mrr = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> log;
  std::vector<double> transe_loss;
};

inline nlohmann::json step_record(std::size_t step, const StepStats& st) {
  nlohmann::json j{{"type", "step"},          {"step", step},
                   {"loss", st.loss},         {"query_loss", st.query_loss},
                   {"contrast_loss", st.contrast_loss},
                   {"alpha_mean", st.alpha_mean},
                   {"episodes", st.episodes}, {"dropped", st.dropped},
                   {"transfer", st.transfer}, {"updated", st.updated}};
  if (!st.warnings.empty()) j["warnings"] = st.warnings;
  return j;
}

inline TrainResult train(const DatasetBundle& bundle, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  Model m = init_model(bundle, cfg, rng, &res.transe_loss);
  nk::AdamState adam(cfg.lr);

  std::ofstream log_file;
  if (opt.out_dir) {
    fs::create_directories(*opt.out_dir);
    std::ofstream(*opt.out_dir / "config.toml") << cfg.to_toml();
    log_file.open(*opt.out_dir / "log.ndjson");
    if (!log_file) throw IngestError("cannot write " + (*opt.out_dir / "log.ndjson").string());
  }
  auto emit = [&](const nlohmann::json& j) {
    res.log.push_back(j.dump());
    if (log_file) log_file << res.log.back() << '\n' << std::flush;
  };

  const bool can_validate = !bundle.task_relations(kgdata::Split::valid).empty();
  std::optional<nk::NamedTensors> best;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const bool transfer = cfg.transfer && warmup_schedule(step, cfg);
    const auto batch = sample_batch(bundle, cfg, rng);
    const StepStats st = outer_step(m, adam, bundle, batch, cfg, transfer, rng);
    if (opt.warnings)
      for (const auto& w : st.warnings) *opt.warnings << "warning: step " << step << ": " << w << '\n';
    emit(step_record(step, st));
    if ((step + 1) % cfg.eval_every == 0 && can_validate) {
      const auto rep = evalkit::evaluate_split(m, bundle, kgdata::Split::valid, cfg,
                                               {.raw = false, .transfer = transfer_active(cfg, step + 1)});
      const auto& o = rep.overall;
      emit({{"type", "eval"}, {"step", step + 1}, {"split", "valid"}, {"mrr", o.mrr}, {"hits@1", o.hits1},
            {"hits@5", o.hits5}, {"hits@10", o.hits10}, {"queries", o.queries}});
      if (!best || o.mrr > res.best_mrr) {
        best = snapshot(m);
        res.best_mrr = o.mrr;
        res.model_steps = step + 1;
      }
    }
  }
  res.steps = cfg.max_steps;
  if (!best) {
    best = snapshot(m);
    res.model_steps = res.steps;
  }
  if (opt.out_dir) {
    save_model(*opt.out_dir / "final.ckpt", snapshot(m), res.steps, &adam);
    save_model(*opt.out_dir / "best.ckpt", *best, res.model_steps);
  }
  m.load(*best);
  res.model = std::move(m);
  return res;
}

}  // namespace transnet::metatrain
