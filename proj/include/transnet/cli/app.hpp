#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "transnet/evalkit/report.hpp"
#include "transnet/kgdata/synth.hpp"
#include "transnet/metatrain/train.hpp"
#include "transnet/taskgraph/encoder.hpp"

namespace transnet::cli {

namespace fs = std::filesystem;
namespace mt = metatrain;
namespace kg = kgdata;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// TrainConfig keys exposed as --flags ('_' becomes '-').
inline const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys{
      "shots",     "dim",          "margin",       "lambda",      "tau",           "wl_depth",
      "lr",        "inner_lr",     "batch",        "warmup_steps", "max_steps",    "eval_every",
      "seed",      "transfer",     "meta",         "query_size",  "context_cap",   "false_contexts",
      "mp_fanout", "heads",        "mrl_layers",   "transe_epochs", "transe_lr",   "transfer_pool"};
  return keys;
}

inline const std::vector<std::string>& synth_keys() {
  static const std::vector<std::string> keys{"entities",         "relations",         "triples_per_relation",
                                             "groups",           "overlap",           "entity_types",
                                             "background_relations", "signature_relations", "latent_dim",
                                             "translation_scale", "relation_jitter",  "tail_noise",
                                             "valid_per_group",  "test_per_group"};
  return keys;
}

inline std::string flag_of(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

// A flag value typed the way the config file would type it; bare words that
// are not numbers or booleans become strings.
inline mt::TomlValue flag_value(const std::string& key, const std::string& raw) {
  try {
    return mt::parse_toml(key + " = " + raw, flag_of(key)).at(key);
  } catch (const UsageError&) {
    return std::string(raw);
  }
}

inline void apply_synth(kg::SynthSpec& s, const std::string& key, const mt::TomlValue& v) {
  auto size = [&](std::size_t& f) {
    const auto* n = std::get_if<long long>(&v);
    if (!n || *n < 0) throw UsageError("synth key '" + key + "' needs a non-negative integer");
    f = static_cast<std::size_t>(*n);
  };
  auto real = [&](double& f) {
    if (const auto* n = std::get_if<long long>(&v)) f = static_cast<double>(*n);
    else if (const auto* x = std::get_if<double>(&v)) f = *x;
    else throw UsageError("synth key '" + key + "' needs a number");
  };
  if (key == "entities") size(s.entities);
  else if (key == "relations") size(s.relations);
  else if (key == "triples_per_relation") size(s.triples_per_relation);
  else if (key == "groups") size(s.groups);
  else if (key == "overlap") real(s.overlap);
  else if (key == "entity_types") size(s.entity_types);
  else if (key == "background_relations") size(s.background_relations);
  else if (key == "signature_relations") size(s.signature_relations);
  else if (key == "latent_dim") size(s.latent_dim);
  else if (key == "translation_scale") real(s.translation_scale);
  else if (key == "relation_jitter") real(s.relation_jitter);
  else if (key == "tail_noise") real(s.tail_noise);
  else if (key == "valid_per_group") size(s.valid_per_group);
  else if (key == "test_per_group") size(s.test_per_group);
  else throw UsageError("unknown synth key '" + key + "'");
}

// [synth] section of a config; `seed` there pins the bundle independently of
// the training seed.
struct SynthSection {
  kg::SynthSpec spec;
  std::optional<std::uint64_t> seed;
  bool present = false;
};

inline SynthSection synth_section(const mt::TomlTable& table) {
  SynthSection out;
  for (const auto& [full, v] : table) {
    if (!full.starts_with("synth.")) continue;
    out.present = true;
    const std::string key = full.substr(6);
    if (key == "seed") {
      const auto* n = std::get_if<long long>(&v);
      if (!n || *n < 0) throw UsageError("synth.seed needs a non-negative integer");
      out.seed = static_cast<std::uint64_t>(*n);
    } else {
      apply_synth(out.spec, key, v);
    }
  }
  return out;
}

// Options shared by the subcommands that need a model configuration.
struct ModelArgs {
  std::string config;
  std::string data;
  std::map<std::string, std::string> overrides;  // key -> raw flag text

  void attach(CLI::App& app) {
    app.add_option("--config", config, "TOML config ([train] and optional [synth] sections)");
    app.add_option("--data", data, "dataset directory in GMatching layout");
    for (const auto& key : train_keys()) app.add_option(flag_of(key), overrides[key], "override " + key);
  }

  mt::TomlTable table(const std::string& fallback = {}) const {
    const std::string path = !config.empty() ? config : fallback;
    if (path.empty()) return {};
    if (!fs::exists(path)) throw UsageError("config file not found: " + path);
    return mt::read_toml(path);
  }

  // default < config file < flags
  mt::TrainConfig resolve(const mt::TomlTable& t) const {
    mt::TrainConfig cfg;
    cfg.apply(t);
    for (const auto& [key, raw] : overrides)
      if (!raw.empty()) cfg.set(key, flag_value(key, raw));
    cfg.validate();
    return cfg;
  }

  kg::DatasetBundle bundle(const mt::TomlTable& t, const mt::TrainConfig& cfg) const {
    if (!data.empty()) return kg::load_dataset(data, {.dim = 0});
    const auto s = synth_section(t);
    if (!s.present) throw UsageError("no data: pass --data or a config with a [synth] section");
    return kg::synth_generate(s.spec, s.seed.value_or(cfg.seed));
  }
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestError("cannot write " + p.string());
  os << text;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"few-shot knowledge graph completion with task-aware transfer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // train
  auto* train = app.add_subcommand("train", "meta-train a model; writes config, log and checkpoints under --out");
  ModelArgs train_args;
  std::string train_out, train_format = "text";
  train_args.attach(*train);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--format", train_format, "summary format")->check(CLI::IsMember({"json", "text"}));

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "rank the queries of a split with a checkpoint");
  ModelArgs eval_args;
  std::string ckpt, split = "test", eval_format = "text", eval_out;
  bool raw = false;
  std::size_t workers = 1;
  eval_args.attach(*evaluate);
  evaluate->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  evaluate->add_option("--split", split, "train | valid | test")->check(CLI::IsMember({"train", "valid", "test"}));
  evaluate->add_option("--format", eval_format, "report format")->check(CLI::IsMember({"json", "text"}));
  evaluate->add_flag("--raw", raw, "raw protocol (no filtering of known tails)");
  evaluate->add_option("--workers", workers, "relations evaluated in parallel")->check(CLI::PositiveNumber);
  evaluate->add_option("--out", eval_out, "also write report and per-relation TSV here");

  // task-sim
  auto* tasksim = app.add_subcommand("task-sim", "task-similarity matrix (TSV) over task relations");
  ModelArgs sim_args;
  std::string sim_ckpt, sim_split = "all", sim_out;
  sim_args.attach(*tasksim);
  tasksim->add_option("--checkpoint", sim_ckpt, "checkpoint file (default: freshly initialised model)");
  tasksim->add_option("--split", sim_split, "train | valid | test | all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  tasksim->add_option("--out", sim_out, "write task_sim.tsv here instead of stdout");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic bundle in GMatching layout");
  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::map<std::string, std::string> synth_flags;
  synth->add_option("--config", synth_config, "TOML config with a [synth] section");
  synth->add_option("--seed", synth_seed, "generator seed (default: synth.seed or 1)");
  synth->add_option("--out", synth_out, "output directory")->required();
  for (const auto& key : synth_keys()) synth->add_option(flag_of(key), synth_flags[key], key);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dataset statistics");
  std::string inspect_data, inspect_format = "text";
  inspect->add_option("--data", inspect_data, "dataset directory")->required();
  inspect->add_option("--format", inspect_format, "output format")->check(CLI::IsMember({"json", "text"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      const auto t = train_args.table();
      const auto cfg = train_args.resolve(t);
      const auto bundle = train_args.bundle(t, cfg);
      const auto res = mt::train(bundle, cfg, {.out_dir = fs::path(train_out), .warnings = &err});
      nlohmann::json j{{"steps", res.steps}, {"best_step", res.model_steps}, {"out", train_out}};
      j["best_valid_mrr"] = std::isnan(res.best_mrr) ? nlohmann::json() : nlohmann::json(res.best_mrr);
      if (train_format == "json") {
        out << j.dump() << '\n';
      } else {
        out << "trained " << res.steps << " steps; best checkpoint at step " << res.model_steps;
        if (!std::isnan(res.best_mrr)) out << " (valid mrr " << res.best_mrr << ")";
        out << "\n";
      }
      return kOk;
    }

    if (*evaluate) {
      const fs::path sibling = fs::path(ckpt).parent_path() / "config.toml";
      const auto t = eval_args.table(eval_args.config.empty() && fs::exists(sibling) ? sibling.string() : "");
      const auto cfg = eval_args.resolve(t);
      const auto bundle = eval_args.bundle(t, cfg);
      const auto loaded = mt::load_model(ckpt, bundle, cfg);
      const auto rep = evalkit::evaluate_split(
          loaded.model, bundle, kg::parse_split(split), cfg,
          {.raw = raw, .transfer = mt::transfer_active(cfg, loaded.steps), .workers = workers});
      const std::string body = eval_format == "json" ? evalkit::report_json(rep).dump(2) + "\n" : evalkit::report_text(rep);
      out << body;
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_file(fs::path(eval_out) / (eval_format == "json" ? "report.json" : "report.txt"), body);
        write_file(fs::path(eval_out) / "relations.tsv", evalkit::relation_tsv(rep));
      }
      return kOk;
    }

    if (*tasksim) {
      const fs::path sibling = sim_ckpt.empty() ? fs::path() : fs::path(sim_ckpt).parent_path() / "config.toml";
      const auto t = sim_args.table(sim_args.config.empty() && !sibling.empty() && fs::exists(sibling) ? sibling.string() : "");
      const auto cfg = sim_args.resolve(t);
      const auto bundle = sim_args.bundle(t, cfg);
      mt::Model m;
      if (!sim_ckpt.empty()) {
        m = mt::load_model(sim_ckpt, bundle, cfg).model;
      } else {
        std::mt19937_64 rng(cfg.seed);
        m = mt::init_model(bundle, cfg, rng);
      }
      std::vector<std::size_t> rels;
      for (auto s : {kg::Split::train, kg::Split::valid, kg::Split::test})
        if (sim_split == "all" || sim_split == kg::split_name(s))
          for (auto r : bundle.task_relations(s)) rels.push_back(r);
      std::vector<taskgraph::TaskRepr> reprs;
      for (auto r : rels) {
        auto rng = evalkit::detail::eval_rng(cfg.seed, r + 1);
        const auto ep = kg::evaluation_episode(bundle, r, cfg.shots, rng);
        const auto sup = mt::support_triples(ep);
        reprs.push_back(taskgraph::build_task_repr(bundle.background, r, sup, m.relations, m.mp, cfg.wl_depth,
                                                   cfg.mp_fanout, rng));
      }
      std::ostringstream os;
      os << "relation";
      for (auto r : rels) os << '\t' << bundle.relations.name(r);
      os << '\n';
      char buf[32];
      for (std::size_t i = 0; i < rels.size(); ++i) {
        os << bundle.relations.name(rels[i]);
        for (std::size_t j = 0; j < rels.size(); ++j) {
          std::snprintf(buf, sizeof buf, "\t%.6f", taskgraph::task_kernel(reprs[i], reprs[j], m.sim).item());
          os << buf;
        }
        os << '\n';
      }
      if (sim_out.empty()) {
        out << os.str();
      } else {
        fs::create_directories(sim_out);
        write_file(fs::path(sim_out) / "task_sim.tsv", os.str());
      }
      return kOk;
    }

    if (*synth) {
      SynthSection s;
      if (!synth_config.empty()) {
        if (!fs::exists(synth_config)) throw UsageError("config file not found: " + synth_config);
        s = synth_section(mt::read_toml(synth_config));
      }
      for (const auto& [key, raw_value] : synth_flags)
        if (!raw_value.empty()) apply_synth(s.spec, key, flag_value(key, raw_value));
      const std::uint64_t seed = synth_seed.value_or(s.seed.value_or(1));
      const auto b = kg::synth_generate(s.spec, seed);
      kg::write_dataset(b, synth_out);
      const auto st = kg::dataset_stats(b);
      out << "wrote " << synth_out << ": relations=" << st.relations << " entities=" << st.entities
          << " triples=" << st.triples << " tasks=" << st.tasks << '\n';
      return kOk;
    }

    if (*inspect) {
      const auto b = kg::load_dataset(inspect_data);
      const auto st = kg::dataset_stats(b);
      if (inspect_format == "json") {
        out << nlohmann::json{{"relations", st.relations}, {"entities", st.entities}, {"triples", st.triples},
                              {"tasks", st.tasks},         {"train", st.train_tasks}, {"valid", st.valid_tasks},
                              {"test", st.test_tasks}}
                   .dump()
            << '\n';
      } else {
        out << "relations=" << st.relations << " entities=" << st.entities << " triples=" << st.triples
            << " tasks=" << st.tasks << '\n'
            << "train=" << st.train_tasks << " valid=" << st.valid_tasks << " test=" << st.test_tasks << '\n';
      }
      return kOk;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace transnet::cli
