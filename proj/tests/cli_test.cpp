#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "support/fixtures.hpp"
#include "transnet/cli/app.hpp"

namespace fs = std::filesystem;
namespace kg = transnet::kgdata;
namespace mt = transnet::metatrain;
namespace nk = transnet::numkit;
namespace cli = transnet::cli;
using testsupport::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "transnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// tiny dataset on disk, shared by the tests below
const fs::path& tiny_data() {
  static TempDir dir("transnet_cli_data");
  static bool made = false;
  if (!made) {
    kg::SynthSpec s;
    s.entities = 40;
    s.relations = 6;
    s.triples_per_relation = 10;
    s.groups = 2;
    s.background_relations = 3;
    kg::write_dataset(kg::synth_generate(s, std::uint64_t{5}), dir.path / "data");
    made = true;
  }
  static const fs::path p = dir.path / "data";
  return p;
}

// keeps every run small; the keys under test override these
const char* kBase =
    "dim = 6\nheads = 1\nbatch = 2\nmax_steps = 2\neval_every = 1\ntranse_epochs = 2\nmp_fanout = 2\n"
    "context_cap = 3\nquery_size = 2\nshots = 2\n";

// base keys plus `key = value`, which replaces a base key of the same name
void write_config(const fs::path& p, const std::string& key = "", const std::string& value = "") {
  std::ofstream os(p);
  os << "[train]\n";
  std::istringstream base(kBase);
  for (std::string line; std::getline(base, line);)
    if (key.empty() || !line.starts_with(key + " =")) os << line << "\n";
  if (!key.empty()) os << key << " = " << value << "\n";
}

mt::TrainConfig trained_config(const fs::path& out) {
  mt::TrainConfig c;
  c.apply(mt::read_toml(out / "config.toml"));
  return c;
}

}  // namespace

TEST(Cli, FlagBeatsConfigBeatsDefaultForEveryField) {
  // key, config value, flag value (TOML spelling); both differ from the default
  const std::vector<std::array<std::string, 3>> cases{
      {"shots", "3", "1"},           {"dim", "3", "2"},
      {"margin", "2.5", "0.5"},      {"lambda", "0.2", "0.3"},
      {"tau", "0.25", "0.75"},       {"wl_depth", "1", "3"},
      {"lr", "0.02", "0.03"},        {"inner_lr", "0.2", "0.4"},
      {"batch", "3", "1"},           {"warmup_steps", "1", "2"},
      {"max_steps", "1", "3"},       {"eval_every", "3", "2"},
      {"seed", "11", "12"},          {"transfer", "false", "true"},
      {"meta", "false", "true"},     {"query_size", "3", "1"},
      {"context_cap", "2", "4"},     {"false_contexts", "2", "3"},
      {"mp_fanout", "1", "3"},       {"heads", "2", "3"},
      {"mrl_layers", "2", "3"},      {"transe_epochs", "1", "3"},
      {"transe_lr", "0.05", "0.02"}, {"transfer_pool", "\"all\"", "batch"}};
  ASSERT_EQ(cases.size(), cli::train_keys().size());
  TempDir tmp("transnet_cli_prec");
  const mt::TrainConfig defaults;
  for (const auto& [key, from_config, from_flag] : cases) {
    SCOPED_TRACE(key);
    const fs::path cfg = tmp.path / (key + ".toml");
    write_config(cfg, key, from_config);
    mt::TrainConfig base;
    base.apply(mt::parse_toml(std::string("[train]\n") + kBase));

    // config only
    auto r = run({"train", "--config", cfg.string(), "--data", tiny_data().string(), "--out",
                  (tmp.path / (key + "_c")).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    mt::TrainConfig want = base;
    want.set(key, mt::parse_toml("v = " + from_config).at("v"));
    EXPECT_EQ(trained_config(tmp.path / (key + "_c")), want);
    EXPECT_FALSE(want == defaults);

    // flag over config
    r = run({"train", "--config", cfg.string(), "--data", tiny_data().string(), "--out",
             (tmp.path / (key + "_f")).string(), cli::flag_of(key), from_flag});
    ASSERT_EQ(r.code, 0) << r.err;
    want.set(key, cli::flag_value(key, from_flag));
    EXPECT_EQ(trained_config(tmp.path / (key + "_f")), want);
  }
  // no config, no flags: built-in defaults reach the resolver untouched
  cli::ModelArgs none;
  EXPECT_EQ(none.resolve({}), defaults);
}

TEST(Cli, TrainWithZeroStepsWritesTheInitialisation) {
  TempDir tmp("transnet_cli_zero");
  write_config(tmp.path / "c.toml");
  auto r = run({"train", "--config", (tmp.path / "c.toml").string(), "--data", tiny_data().string(), "--out",
                (tmp.path / "out").string(), "--max-steps", "0", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["steps"], 0);
  EXPECT_TRUE(j["best_valid_mrr"].is_null());
  for (auto f : {"best.ckpt", "final.ckpt", "config.toml", "log.ndjson"}) EXPECT_TRUE(fs::exists(tmp.path / "out" / f));
  EXPECT_EQ(slurp(tmp.path / "out" / "log.ndjson"), "");

  auto cfg = trained_config(tmp.path / "out");
  auto bundle = kg::load_dataset(tiny_data());
  std::mt19937_64 rng(cfg.seed);
  auto fresh = mt::init_model(bundle, cfg, rng);
  auto saved = nk::read_checkpoint(tmp.path / "out" / "best.ckpt");
  for (const auto& [name, t] : fresh.named()) {
    const auto* s = nk::find_tensor(saved, name);
    ASSERT_NE(s, nullptr) << name;
    EXPECT_EQ(s->values(), t.values()) << name;
  }
}

TEST(Cli, SynthIsByteIdenticalAndInspectReadsIt) {
  TempDir tmp("transnet_cli_synth");
  for (auto d : {"a", "b"}) {
    auto r = run({"synth", "--entities", "200", "--relations", "12", "--seed", "7", "--out", (tmp.path / d).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(tree(tmp.path / "a"), tree(tmp.path / "b"));
  auto other = run({"synth", "--seed", "8", "--out", (tmp.path / "c").string()});
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(tree(tmp.path / "a"), tree(tmp.path / "c"));

  auto r = run({"inspect", "--data", (tmp.path / "a").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto st = kg::dataset_stats(kg::load_dataset(tmp.path / "a"));
  std::istringstream lines(r.out);
  std::string first;
  std::getline(lines, first);
  EXPECT_EQ(first, "relations=" + std::to_string(st.relations) + " entities=200 triples=" +
                       std::to_string(st.triples) + " tasks=12");
  EXPECT_EQ(st.triples, 720 + kg::synth_generate(kg::SynthSpec{}, std::uint64_t{7}).background.size());

  auto bad = run({"synth", "--relations", "2", "--groups", "3", "--out", (tmp.path / "d").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_FALSE(fs::exists(tmp.path / "d"));
}

TEST(Cli, EvaluateFormatsProtocolsAndWorkers) {
  TempDir tmp("transnet_cli_eval");
  write_config(tmp.path / "c.toml");
  ASSERT_EQ(run({"train", "--config", (tmp.path / "c.toml").string(), "--data", tiny_data().string(), "--out",
                 (tmp.path / "run").string()})
                .code,
            0);
  const std::string ck = (tmp.path / "run" / "best.ckpt").string();
  // config.toml next to the checkpoint is picked up
  auto js = run({"evaluate", "--checkpoint", ck, "--data", tiny_data().string(), "--format", "json"});
  ASSERT_EQ(js.code, 0) << js.err;
  auto j = nlohmann::json::parse(js.out);
  for (auto k : {"mrr", "hits@1", "hits@5", "hits@10", "queries", "split", "random_baseline_mrr", "relations"})
    EXPECT_TRUE(j.contains(k)) << k;
  auto raw = nlohmann::json::parse(
      run({"evaluate", "--checkpoint", ck, "--data", tiny_data().string(), "--format", "json", "--raw"}).out);
  EXPECT_LE(raw["mrr"].get<double>(), j["mrr"].get<double>());
  // task-sim on a checkpoint also reads the sibling config (dim 6 here, not the default)
  auto sim = run({"task-sim", "--checkpoint", ck, "--data", tiny_data().string()});
  EXPECT_EQ(sim.code, 0) << sim.err;
  auto par = run({"evaluate", "--checkpoint", ck, "--data", tiny_data().string(), "--format", "json", "--workers", "3"});
  EXPECT_EQ(par.out, js.out);

  auto text = run({"evaluate", "--checkpoint", ck, "--data", tiny_data().string(), "--out", (tmp.path / "ev").string()});
  ASSERT_EQ(text.code, 0) << text.err;
  EXPECT_NE(text.out.find("random-ranking mrr"), std::string::npos);
  EXPECT_EQ(slurp(tmp.path / "ev" / "report.txt"), text.out);
  EXPECT_EQ(slurp(tmp.path / "ev" / "relations.tsv").rfind("relation\tqueries\tmrr", 0), 0u);
}

TEST(Cli, TaskSimIsASymmetricSixDecimalMatrix) {
  auto r = run({"task-sim", "--data", tiny_data().string(), "--dim", "6", "--heads", "1", "--transe-epochs", "2",
                "--shots", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header;
  std::getline(lines, header);
  std::vector<std::string> names;
  {
    std::istringstream h(header);
    std::string cell;
    std::getline(h, cell, '\t');
    EXPECT_EQ(cell, "relation");
    while (std::getline(h, cell, '\t')) names.push_back(cell);
  }
  EXPECT_EQ(names.size(), 6u);
  std::vector<std::vector<double>> m;
  for (std::string line; std::getline(lines, line);) {
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, '\t');
    EXPECT_EQ(cell, names[m.size()]);
    m.emplace_back();
    while (std::getline(row, cell, '\t')) {
      const auto dot = cell.find('.');
      ASSERT_NE(dot, std::string::npos);
      EXPECT_EQ(cell.size() - dot - 1, 6u) << cell;
      m.back().push_back(std::stod(cell));
    }
  }
  ASSERT_EQ(m.size(), names.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_GE(m[i][i], 0.5);
    for (std::size_t k = 0; k < m.size(); ++k) EXPECT_EQ(m[i][k], m[k][i]);
  }
}

TEST(Cli, ExitCodes) {
  TempDir tmp("transnet_cli_codes");
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"train", "--out", (tmp.path / "x").string(), "--no-such-flag", "1"}).code, 1);
  EXPECT_EQ(run({"train", "--data", tiny_data().string(), "--out", (tmp.path / "x").string(), "--lr", "-1"}).code, 1);
  EXPECT_EQ(run({"train", "--out", (tmp.path / "x").string()}).code, 1);  // no data source
  write_config(tmp.path / "typo.toml", "learning_rate", "0.1");
  EXPECT_EQ(run({"train", "--config", (tmp.path / "typo.toml").string(), "--data", tiny_data().string(), "--out",
                 (tmp.path / "x").string()})
                .code,
            1);
  EXPECT_EQ(run({"inspect", "--data", (tmp.path / "missing").string()}).code, 2);
  EXPECT_EQ(run({"evaluate", "--checkpoint", (tmp.path / "missing.ckpt").string(), "--data",
                 tiny_data().string()})
                .code,
            2);
  EXPECT_EQ(run({"--help"}).code, 0);

  // a poisoned checkpoint trips the numeric checks during evaluation
  write_config(tmp.path / "c.toml");
  ASSERT_EQ(run({"train", "--config", (tmp.path / "c.toml").string(), "--data", tiny_data().string(), "--out",
                 (tmp.path / "run").string(), "--max-steps", "0"})
                .code,
            0);
  auto saved = nk::read_checkpoint(tmp.path / "run" / "best.ckpt");
  for (auto& [name, t] : saved)
    if (name == "entities")
      for (auto& v : t.data()) v = std::nan("");
  nk::write_checkpoint(tmp.path / "run" / "nan.ckpt", saved);
  auto r = run({"evaluate", "--checkpoint", (tmp.path / "run" / "nan.ckpt").string(), "--data", tiny_data().string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, WritesNothingOutsideOut) {
  TempDir tmp("transnet_cli_sandbox");
  fs::create_directories(tmp.path / "cwd");
  const auto before_cwd = fs::current_path();
  fs::current_path(tmp.path / "cwd");
  write_config(tmp.path / "c.toml");
  const auto data_before = tree(tiny_data());
  const auto cfg = (tmp.path / "c.toml").string();
  const auto cfg_before = slurp(cfg);

  ASSERT_EQ(run({"train", "--config", cfg, "--data", tiny_data().string(), "--out", "out/run"}).code, 0);
  ASSERT_EQ(run({"evaluate", "--checkpoint", "out/run/best.ckpt", "--data", tiny_data().string()}).code, 0);
  ASSERT_EQ(run({"task-sim", "--config", cfg, "--data", tiny_data().string(), "--out", "out/sim"}).code, 0);
  ASSERT_EQ(run({"synth", "--out", "out/syn"}).code, 0);
  ASSERT_EQ(run({"inspect", "--data", "out/syn"}).code, 0);

  std::set<std::string> top;
  for (const auto& e : fs::directory_iterator(".")) top.insert(e.path().filename().string());
  fs::current_path(before_cwd);
  EXPECT_EQ(top, std::set<std::string>{"out"});
  EXPECT_EQ(tree(tiny_data()), data_before);
  EXPECT_EQ(slurp(cfg), cfg_before);
  std::set<std::string> written;
  for (const auto& e : fs::directory_iterator(tmp.path / "cwd" / "out")) written.insert(e.path().filename().string());
  EXPECT_EQ(written, (std::set<std::string>{"run", "sim", "syn"}));
}
