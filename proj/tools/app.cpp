#include "app.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <toml.hpp>

namespace fs = std::filesystem;

namespace dae::app {
namespace {

std::pair<std::string, std::string> split_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return {spec, ""};
  return {spec.substr(0, colon), spec.substr(colon + 1)};
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidInput("bad " + what + " '" + s + "'");
}

std::string first_existing(const std::string& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    const fs::path p = fs::path(dir) / n;
    if (fs::exists(p)) return p.string();
  }
  return {};
}

// Round-robin over classes so that any prefix is class-balanced.
LabeledImages interleave_classes(const LabeledImages& data) {
  std::vector<std::vector<int>> by_class;
  for (int i = 0; i < static_cast<int>(data.labels.size()); ++i) {
    const int l = data.labels[i];
    if (l >= static_cast<int>(by_class.size())) by_class.resize(l + 1);
    by_class[l].push_back(i);
  }
  std::vector<int> order;
  for (std::size_t k = 0; order.size() < data.labels.size(); ++k) {
    for (const auto& c : by_class) {
      if (k < c.size()) order.push_back(c[k]);
    }
  }
  LabeledImages out;
  Shape s = data.images.shape();
  out.images = Tensor(s);
  const std::size_t len = data.images.size() / s[0];
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy_n(data.images.data() + order[r] * len, len, out.images.data() + r * len);
    out.labels.push_back(data.labels[order[r]]);
  }
  return out;
}

LabeledImages take_first(const LabeledImages& data, int limit) {
  if (limit < 0 || limit >= static_cast<int>(data.labels.size())) return data;
  return {data.images.rows(0, limit), std::vector<int>(data.labels.begin(), data.labels.begin() + limit)};
}

Dataset from_cache(const DatasetCache& c, const std::string& name) {
  Dataset d;
  d.name = name;
  d.images = c.images;
  d.labels = c.labels;
  d.ids = c.ids;
  d.spec = c.spec;
  return d;
}

Dataset mnist_dataset(const std::string& kind, const std::string& arg, const DatasetOptions& opts) {
  const int digit = arg.empty() || arg == "all" ? -1 : parse_int(arg, "digit");
  if (digit < -1 || digit > 9) throw InvalidInput("digit must be 0-9 or 'all'");
  DeformSpec ds;
  ds.seed = opts.seed;
  if (kind == "mnist") ds.num_waves = 0;
  nlohmann::json spec{{"source", kind}, {"digit", digit}, {"limit", opts.limit}, {"deform", ds},
                      {"mnist", fs::path(mnist_dir()).filename().string()}};
  const std::string hash = config_hash(spec);

  const char* cache_root = std::getenv("DAE_CACHE_DIR");
  const std::string cache_dir =
      cache_root && *cache_root ? (fs::path(cache_root) / (kind + "-" + hash)).string() : std::string();
  if (!cache_dir.empty() && fs::exists(fs::path(cache_dir) / "manifest.json")) {
    DatasetCache c = read_cache(cache_dir);
    if (c.spec_hash == hash) return from_cache(c, kind);
  }

  LabeledImages base = load_mnist();
  base = digit >= 0 ? select_label(base, digit) : interleave_classes(base);
  base = take_first(base, opts.limit);
  const DeformedDataset gen = generate_deformed_mnist(ds, base.images, base.labels);

  DatasetCache c;
  c.images = gen.images;
  c.labels = gen.labels;
  for (std::size_t i = 0; i < gen.labels.size(); ++i) c.ids.push_back(std::to_string(i));
  c.partition.assign(gen.labels.size(), 0);
  c.spec = spec;
  c.spec_hash = hash;
  if (!cache_dir.empty()) write_cache(cache_dir, c);
  return from_cache(c, kind);
}

Dataset face_dataset(const std::string& arg, const DatasetOptions& opts) {
  const int count = arg.empty() ? 1000 : parse_int(arg, "count");
  if (count <= 0) throw InvalidInput("synthetic-faces count must be positive");
  LandmarkDataset gen = make_synthetic_landmark_dataset(count, opts.seed);
  Dataset d;
  d.name = "synthetic-faces";
  d.images = gen.images;
  d.landmarks = gen.landmarks;
  for (int i = 0; i < count; ++i) d.ids.push_back(std::to_string(i));
  d.spec = {{"source", "synthetic-faces"}, {"count", count}, {"seed", opts.seed}};
  return d;
}

Dataset folder_dataset(const std::string& dir, const DatasetOptions& opts) {
  ImageFolder f = load_image_folder(dir, 64, opts.channels);
  Dataset d;
  d.name = dir;
  d.images = std::move(f.images);
  d.ids = f.ids;
  d.spec = {{"source", "folder"}, {"path", dir}, {"channels", opts.channels}};
  if (!opts.landmarks.empty()) {
    const auto table = load_landmarks(opts.landmarks, opts.interleaved);
    for (std::size_t i = 0; i < d.ids.size(); ++i) {
      const auto it = table.find(d.ids[i]);
      if (it == table.end()) throw InvalidInput("no landmarks for image '" + d.ids[i] + "' in " + opts.landmarks);
      d.landmarks.push_back(to_crop_frame(it->second, f.original_sizes[i][0], f.original_sizes[i][1], 64));
    }
    d.spec["landmarks"] = opts.landmarks;
  }
  return d;
}

void apply_limit(Dataset& d, int limit) {
  const int n = d.images.dim(0);
  if (limit < 0 || limit >= n) return;
  d.images = d.images.rows(0, limit);
  if (!d.labels.empty()) d.labels.resize(limit);
  if (!d.ids.empty()) d.ids.resize(limit);
  if (!d.landmarks.empty()) d.landmarks.resize(limit);
}

}  // namespace

Dataset load_dataset(const std::string& spec, const DatasetOptions& opts) {
  const auto [kind, arg] = split_spec(spec);
  Dataset d;
  if (kind == "mnist" || kind == "deformed-mnist") {
    d = mnist_dataset(kind, arg, opts);
  } else if (kind == "synthetic-faces") {
    d = face_dataset(arg, opts);
  } else if (fs::is_directory(spec)) {
    d = fs::exists(fs::path(spec) / "manifest.json") ? from_cache(read_cache(spec), spec) : folder_dataset(spec, opts);
  } else {
    throw InvalidInput("unknown dataset '" + spec + "'");
  }
  apply_limit(d, opts.limit);
  return d;
}

std::string mnist_dir() {
  const char* env = std::getenv("DAE_MNIST_DIR");
  if (env && *env) return env;
  return DAE_DEFAULT_MNIST_DIR;
}

LabeledImages load_mnist() {
  const std::string dir = mnist_dir();
  const std::string images = first_existing(dir, {"train-images-idx3-ubyte.gz", "train-images-idx3-ubyte",
                                                  "mnist5k-images-idx3-ubyte.gz"});
  const std::string labels = first_existing(dir, {"train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte",
                                                  "mnist5k-labels-idx1-ubyte.gz"});
  if (images.empty() || labels.empty()) throw InvalidInput("no MNIST IDX files found in " + dir);
  return read_mnist_idx(images, labels);
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  const std::string ext = fs::path(path).extension().string();
  const bool toml_like = ext == ".toml" || (ext != ".json" && text.find_first_not_of(" \t\r\n") != std::string::npos &&
                                            text[text.find_first_not_of(" \t\r\n")] != '{');
  if (!toml_like) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("config " + path + ": " + e.what());
    }
  }
  try {
    const toml::table tbl = toml::parse(text, path);
    std::ostringstream js;
    js << toml::json_formatter{tbl};
    return nlohmann::json::parse(js.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config " << path << ":" << e.source().begin.line << ": " << e.description();
    throw InvalidInput(msg.str());
  }
}

std::string git_describe() { return DAE_GIT_DESCRIBE; }

std::string iso_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string config_hash(const nlohmann::json& config) { return fnv1a_hex(config.dump()); }

Manifest::Manifest(std::string output_dir, std::string command, std::vector<std::string> argv)
    : dir_(std::move(output_dir)) {
  doc_ = {{"command", std::move(command)}, {"argv", std::move(argv)}, {"git_describe", git_describe()}};
}

void Manifest::set_config(const nlohmann::json& config, std::uint64_t seed) {
  doc_["config"] = config;
  doc_["config_hash"] = config_hash(config);
  doc_["seed"] = seed;
}

void Manifest::start() {
  doc_["started_at"] = iso_timestamp();
  doc_["status"] = "running";
  write();
}

void Manifest::finish(bool ok, const std::string& error) {
  doc_["finished_at"] = iso_timestamp();
  doc_["status"] = ok ? "ok" : "failed";
  if (!error.empty()) doc_["error"] = error;
  write();
}

void Manifest::write() const {
  if (dir_.empty()) return;
  fs::create_directories(dir_);
  nlohmann::json out = doc_;
  for (const auto& [k, v] : extra_.items()) out[k] = v;
  std::ofstream os(fs::path(dir_) / "manifest.json");
  os << out.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed to write manifest in " + dir_);
}

}  // namespace dae::app
