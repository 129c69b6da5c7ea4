#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "transnet/kgdata/dataset.hpp"

namespace testsupport {

namespace kg = transnet::kgdata;

// Builds a bundle from name triples. Task relations go to the given split map.
struct BundleBuilder {
  kg::DatasetBundle b;
  std::vector<kg::Triple> background;

  std::size_t ent(const std::string& n) { return b.entities.intern(n); }
  std::size_t rel(const std::string& n) { return b.relations.intern(n); }

  BundleBuilder& bg(const std::string& h, const std::string& r, const std::string& t) {
    background.push_back({ent(h), rel(r), ent(t)});
    return *this;
  }
  BundleBuilder& task(kg::Split split, const std::string& h, const std::string& r, const std::string& t) {
    auto& m = split == kg::Split::train ? b.train_tasks : split == kg::Split::valid ? b.valid_tasks : b.test_tasks;
    m[rel(r)].push_back({ent(h), rel(r), ent(t)});
    return *this;
  }
  BundleBuilder& candidates(const std::string& r, const std::vector<std::string>& names) {
    auto& c = b.candidates[rel(r)];
    for (const auto& n : names) c.push_back(ent(n));
    return *this;
  }
  kg::DatasetBundle build() {
    b.background = kg::KnowledgeGraph(b.entities.size(), background);
    b.known.clear();
    for (const auto& t : background) b.known.insert(t);
    for (auto* m : {&b.train_tasks, &b.valid_tasks, &b.test_tasks})
      for (const auto& [_, v] : *m)
        for (const auto& t : v) b.known.insert(t);
    return b;
  }
};

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / (name + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testsupport
