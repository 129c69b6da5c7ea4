#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "transnet/kgdata/graph.hpp"

namespace transnet::kgdata {

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid" || s == "dev") return Split::valid;
  if (s == "test") return Split::test;
  throw ContractError("unknown split '" + s + "' (expected train|valid|test)");
}

// Row-major embedding rows, one per vocabulary id present in the file.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;
};

struct DatasetBundle {
  Vocabulary entities;
  Vocabulary relations;
  // Background graph (path_graph); source of context and structure.
  KnowledgeGraph background;
  // Task triples grouped by relation, per split. Keys are relation ids.
  std::map<std::size_t, std::vector<Triple>> train_tasks;
  std::map<std::size_t, std::vector<Triple>> valid_tasks;
  std::map<std::size_t, std::vector<Triple>> test_tasks;
  std::map<std::size_t, std::vector<std::size_t>> candidates;
  // Every known-true triple: background plus all task triples.
  TripleSet known;
  std::optional<EmbeddingMatrix> entity_vectors;
  std::optional<EmbeddingMatrix> relation_vectors;
  // Synthetic bundles only: relation id -> latent group.
  std::map<std::size_t, std::size_t> groups;

  const std::map<std::size_t, std::vector<Triple>>& tasks(Split s) const {
    switch (s) {
      case Split::train: return train_tasks;
      case Split::valid: return valid_tasks;
      case Split::test: return test_tasks;
    }
    return train_tasks;
  }

  std::vector<std::size_t> task_relations(Split s) const {
    std::vector<std::size_t> out;
    for (const auto& [r, _] : tasks(s)) out.push_back(r);
    return out;
  }

  const std::vector<Triple>& task_triples(std::size_t relation) const {
    for (auto* m : {&train_tasks, &valid_tasks, &test_tasks}) {
      if (auto it = m->find(relation); it != m->end()) return it->second;
    }
    throw ContractError("relation " + std::to_string(relation) + " is not a task relation");
  }

  const std::vector<std::size_t>& candidates_of(std::size_t relation) const {
    auto it = candidates.find(relation);
    if (it == candidates.end()) throw ContractError("no candidate list for relation " + std::to_string(relation));
    return it->second;
  }

  bool is_known(const Triple& t) const { return known.contains(t); }

  std::size_t task_triple_count() const {
    std::size_t n = 0;
    for (auto* m : {&train_tasks, &valid_tasks, &test_tasks})
      for (const auto& [_, v] : *m) n += v.size();
    return n;
  }
};

struct DatasetStats {
  std::size_t relations = 0;
  std::size_t entities = 0;
  std::size_t triples = 0;
  std::size_t tasks = 0;
  std::size_t train_tasks = 0;
  std::size_t valid_tasks = 0;
  std::size_t test_tasks = 0;
};

inline DatasetStats dataset_stats(const DatasetBundle& b) {
  return {b.relations.size(),       b.entities.size(),      b.background.size() + b.task_triple_count(),
          b.train_tasks.size() + b.valid_tasks.size() + b.test_tasks.size(),
          b.train_tasks.size(),     b.valid_tasks.size(),   b.test_tasks.size()};
}

struct LoadOptions {
  // Expected width of pretrained embedding rows; 0 accepts whatever the file holds.
  std::size_t dim = 0;
};

namespace detail {

namespace fs = std::filesystem;

inline const std::vector<std::string>& required_files() {
  static const std::vector<std::string> files{"path_graph",     "train_tasks.json", "dev_tasks.json",
                                              "test_tasks.json", "rel2candidates.json", "ent2ids.json",
                                              "relation2ids.json"};
  return files;
}

// GMatching ships ent2ids / relation2ids without the extension; accept both.
inline std::optional<fs::path> locate(const fs::path& root, const std::string& name) {
  if (fs::exists(root / name)) return root / name;
  if (name.ends_with(".json")) {
    auto bare = name.substr(0, name.size() - 5);
    if ((name == "ent2ids.json" || name == "relation2ids.json") && fs::exists(root / bare)) return root / bare;
  }
  return std::nullopt;
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IngestError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + p.filename().string() + ": " + e.what());
  }
}

inline void read_id_map(const fs::path& p, Vocabulary& vocab) {
  auto j = read_json(p);
  if (!j.is_object()) throw FormatError(p.filename().string() + ": expected an object of name -> id");
  std::vector<std::optional<std::string>> by_id(j.size());
  for (auto& [name, id] : j.items()) {
    if (!id.is_number_integer()) throw FormatError(p.filename().string() + ": non-integer id for '" + name + "'");
    auto v = id.get<long long>();
    if (v < 0 || static_cast<std::size_t>(v) >= by_id.size()) {
      throw FormatError(p.filename().string() + ": id " + std::to_string(v) + " for '" + name + "' out of range [0," +
                        std::to_string(by_id.size()) + ")");
    }
    if (by_id[v]) throw FormatError(p.filename().string() + ": duplicate id " + std::to_string(v));
    by_id[v] = name;
  }
  for (auto& n : by_id) vocab.intern(*n);
}

inline std::map<std::size_t, std::vector<Triple>> read_tasks(const fs::path& p, Vocabulary& ents, Vocabulary& rels) {
  auto j = read_json(p);
  if (!j.is_object()) throw FormatError(p.filename().string() + ": expected an object of relation -> triples");
  std::map<std::size_t, std::vector<Triple>> out;
  for (auto& [rel, triples] : j.items()) {
    const auto rid = rels.intern(rel);
    auto& list = out[rid];
    for (auto& tr : triples) {
      if (!tr.is_array() || tr.size() != 3) throw FormatError(p.filename().string() + ": triples must be [h, r, t]");
      const auto h = ents.intern(tr[0].get<std::string>());
      const auto r = rels.intern(tr[1].get<std::string>());
      const auto t = ents.intern(tr[2].get<std::string>());
      if (r != rid) throw FormatError(p.filename().string() + ": triple relation differs from its task key '" + rel + "'");
      list.push_back({h, r, t});
    }
  }
  return out;
}

inline EmbeddingMatrix read_vectors(const fs::path& p, std::size_t expected_rows, std::size_t dim) {
  std::ifstream is(p);
  if (!is) throw IngestError("cannot read " + p.string());
  EmbeddingMatrix m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw FormatError(p.filename().string() + ": non-numeric value on row " + std::to_string(m.rows));
    if (m.rows == 0) m.dim = row.size();
    if (row.size() != m.dim) throw FormatError(p.filename().string() + ": ragged row " + std::to_string(m.rows));
    m.values.insert(m.values.end(), row.begin(), row.end());
    ++m.rows;
  }
  if (dim != 0 && m.dim != dim) {
    throw FormatError(p.filename().string() + ": row width " + std::to_string(m.dim) + " but embedding dim is " +
                      std::to_string(dim));
  }
  if (m.rows < expected_rows) {
    throw FormatError(p.filename().string() + ": " + std::to_string(m.rows) + " rows for " +
                      std::to_string(expected_rows) + " ids");
  }
  m.values.resize(expected_rows * m.dim);
  m.rows = expected_rows;
  return m;
}

}  // namespace detail

// Reads a GMatching-layout directory.
inline DatasetBundle load_dataset(const std::filesystem::path& root, const LoadOptions& options = {}) {
  namespace fs = std::filesystem;
  std::vector<std::string> missing;
  std::map<std::string, fs::path> paths;
  for (const auto& f : detail::required_files()) {
    if (auto p = detail::locate(root, f)) paths[f] = *p;
    else missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string msg = "dataset directory " + root.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    msg += " (expected:";
    for (const auto& f : detail::required_files()) msg += " " + f;
    msg += ")";
    throw IngestError(msg);
  }

  DatasetBundle b;
  detail::read_id_map(paths["ent2ids.json"], b.entities);
  detail::read_id_map(paths["relation2ids.json"], b.relations);
  const std::size_t pretrained_entities = b.entities.size();
  const std::size_t pretrained_relations = b.relations.size();

  std::vector<Triple> background;
  {
    std::ifstream is(paths["path_graph"]);
    if (!is) throw IngestError("cannot read " + paths["path_graph"].string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> parts;
      std::istringstream ls(line);
      std::string part;
      while (std::getline(ls, part, '\t')) parts.push_back(part);
      if (parts.size() != 3) throw FormatError("path_graph line " + std::to_string(lineno) + ": expected head\\trelation\\ttail");
      background.push_back({b.entities.intern(parts[0]), b.relations.intern(parts[1]), b.entities.intern(parts[2])});
    }
  }

  b.train_tasks = detail::read_tasks(paths["train_tasks.json"], b.entities, b.relations);
  b.valid_tasks = detail::read_tasks(paths["dev_tasks.json"], b.entities, b.relations);
  b.test_tasks = detail::read_tasks(paths["test_tasks.json"], b.entities, b.relations);

  auto cands = detail::read_json(paths["rel2candidates.json"]);
  if (!cands.is_object()) throw FormatError("rel2candidates.json: expected an object");
  for (auto& [rel, list] : cands.items()) {
    auto& out = b.candidates[b.relations.intern(rel)];
    for (auto& name : list) out.push_back(b.entities.intern(name.get<std::string>()));
  }

  for (auto [a, bb] : {std::pair{&b.train_tasks, &b.valid_tasks}, std::pair{&b.train_tasks, &b.test_tasks},
                       std::pair{&b.valid_tasks, &b.test_tasks}}) {
    for (const auto& [r, _] : *a) {
      if (bb->contains(r)) throw ValidationError("task relation '" + b.relations.name(r) + "' appears in two splits");
    }
  }
  for (auto* m : {&b.train_tasks, &b.valid_tasks, &b.test_tasks}) {
    for (const auto& [r, _] : *m) {
      if (!b.candidates.contains(r)) throw ValidationError("task relation '" + b.relations.name(r) + "' has no candidates");
    }
  }

  b.background = KnowledgeGraph(b.entities.size(), std::move(background));
  for (const auto& t : b.background.triples()) b.known.insert(t);
  for (auto* m : {&b.train_tasks, &b.valid_tasks, &b.test_tasks})
    for (const auto& [_, v] : *m)
      for (const auto& t : v) b.known.insert(t);

  if (auto p = detail::locate(root, "entity2vec.TransE")) {
    b.entity_vectors = detail::read_vectors(*p, pretrained_entities, options.dim);
  }
  if (auto p = detail::locate(root, "relation2vec.TransE")) {
    b.relation_vectors = detail::read_vectors(*p, pretrained_relations, options.dim);
  }
  if (auto p = detail::locate(root, "groups.json")) {
    auto j = detail::read_json(*p);
    for (auto& [rel, g] : j.items()) b.groups[b.relations.id(rel)] = g.get<std::size_t>();
  }
  return b;
}

// Writes the bundle in the same layout load_dataset reads.
inline void write_dataset(const DatasetBundle& b, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  auto write_text = [&](const std::string& name, const std::string& text) {
    std::ofstream os(root / name, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestError("cannot write " + (root / name).string());
    os << text;
  };
  {
    std::ostringstream os;
    for (const auto& t : b.background.triples())
      os << b.entities.name(t.head) << '\t' << b.relations.name(t.relation) << '\t' << b.entities.name(t.tail) << '\n';
    write_text("path_graph", os.str());
  }
  auto tasks_json = [&](const std::map<std::size_t, std::vector<Triple>>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [r, list] : m) {
      auto arr = nlohmann::json::array();
      for (const auto& t : list)
        arr.push_back({b.entities.name(t.head), b.relations.name(t.relation), b.entities.name(t.tail)});
      j[b.relations.name(r)] = std::move(arr);
    }
    return j.dump() + "\n";
  };
  write_text("train_tasks.json", tasks_json(b.train_tasks));
  write_text("dev_tasks.json", tasks_json(b.valid_tasks));
  write_text("test_tasks.json", tasks_json(b.test_tasks));
  {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [r, list] : b.candidates) {
      auto arr = nlohmann::json::array();
      for (auto e : list) arr.push_back(b.entities.name(e));
      j[b.relations.name(r)] = std::move(arr);
    }
    write_text("rel2candidates.json", j.dump() + "\n");
  }
  auto ids_json = [](const Vocabulary& v) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < v.size(); ++i) j[v.name(i)] = i;
    return j.dump() + "\n";
  };
  write_text("ent2ids.json", ids_json(b.entities));
  write_text("relation2ids.json", ids_json(b.relations));
  auto vec_text = [](const EmbeddingMatrix& m) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.dim; ++c) os << (c ? "\t" : "") << m.values[r * m.dim + c];
      os << '\n';
    }
    return os.str();
  };
  if (b.entity_vectors) write_text("entity2vec.TransE", vec_text(*b.entity_vectors));
  if (b.relation_vectors) write_text("relation2vec.TransE", vec_text(*b.relation_vectors));
  if (!b.groups.empty()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [r, g] : b.groups) j[b.relations.name(r)] = g;
    write_text("groups.json", j.dump() + "\n");
  }
}

}  // namespace transnet::kgdata
