#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dae/datasets.hpp"
#include "dae/tensor.hpp"

namespace dae::app {

/// Images plus whatever annotations the source provides.
struct Dataset {
  std::string name;
  Tensor images;                       // N x C x 64 x 64
  std::vector<int> labels;             // empty when unlabeled
  std::vector<std::string> ids;
  std::vector<LandmarkSet> landmarks;  // empty unless the source has landmarks
  nlohmann::json spec;
};

struct DatasetOptions {
  std::uint64_t seed = 0;
  int channels = 1;        // for image folders
  int limit = -1;          // keep the first `limit` items
  std::string landmarks;   // landmark file for image folders
  bool interleaved = false;
};

/// Resolves a dataset specifier:
///   mnist[:D]            MNIST (digit D or all) resized to 64x64
///   deformed-mnist[:D]   same, through random sinusoidal distortions
///   synthetic-faces[:N]  canonical face under known warps, with landmarks
///   <dir>                dataset cache (has manifest.json) or image folder
/// MNIST-derived sets are cached under $DAE_CACHE_DIR when it is set.
Dataset load_dataset(const std::string& spec, const DatasetOptions& opts);

/// Directory holding the MNIST IDX files ($DAE_MNIST_DIR or the bundled subset).
std::string mnist_dir();
LabeledImages load_mnist();

/// Parses a JSON or TOML file (chosen by extension, falling back on content).
nlohmann::json read_config_file(const std::string& path);

std::string git_describe();
std::string iso_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

/// Hash of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& config);

/// Run manifest written to <output_dir>/manifest.json at start and on finish.
class Manifest {
 public:
  Manifest(std::string output_dir, std::string command, std::vector<std::string> argv);

  void set_config(const nlohmann::json& config, std::uint64_t seed);
  void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }
  void start();
  void finish(bool ok, const std::string& error = {});

 private:
  void write() const;

  std::string dir_;
  nlohmann::json doc_;
  nlohmann::json extra_ = nlohmann::json::object();
};

}  // namespace dae::app
