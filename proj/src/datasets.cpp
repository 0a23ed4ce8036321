#include "dae/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace dae {

// ------------------------------------------------------------ deformed MNIST

void DeformSpec::validate() const {
  if (num_waves < 0) throw InvalidInput("DeformSpec: num_waves must be >= 0");
  if (amp_lo < 0 || amp_hi < amp_lo) throw InvalidInput("DeformSpec: amplitudes must satisfy 0 <= lo <= hi");
  if (freq_lo <= 0 || freq_hi < freq_lo) throw InvalidInput("DeformSpec: frequencies must satisfy 0 < lo <= hi");
  if (copies < 1) throw InvalidInput("DeformSpec: copies must be >= 1");
  if (side < 2) throw InvalidInput("DeformSpec: side must be >= 2");
}

void to_json(nlohmann::json& j, const DeformSpec& s) {
  j = nlohmann::json{{"num_waves", s.num_waves}, {"amp_lo", s.amp_lo},   {"amp_hi", s.amp_hi},
                     {"freq_lo", s.freq_lo},     {"freq_hi", s.freq_hi}, {"seed", s.seed},
                     {"copies", s.copies},       {"side", s.side}};
}

void from_json(const nlohmann::json& j, DeformSpec& s) {
  s.num_waves = j.value("num_waves", s.num_waves);
  s.amp_lo = j.value("amp_lo", s.amp_lo);
  s.amp_hi = j.value("amp_hi", s.amp_hi);
  s.freq_lo = j.value("freq_lo", s.freq_lo);
  s.freq_hi = j.value("freq_hi", s.freq_hi);
  s.seed = j.value("seed", s.seed);
  s.copies = j.value("copies", s.copies);
  s.side = j.value("side", s.side);
}

std::array<double, 2> WaveDraw::displacement(double x, double y, int side) const {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double dx = 0.0, dy = 0.0;
  for (std::size_t k = 0; k < amp_x.size(); ++k) dx += amp_x[k] * std::sin(two_pi * freq_x[k] * y / side + phase_x[k]);
  for (std::size_t k = 0; k < amp_y.size(); ++k) dy += amp_y[k] * std::sin(two_pi * freq_y[k] * x / side + phase_y[k]);
  return {dx, dy};
}

WarpField sinusoid_field(const WaveDraw& draw, int side) {
  WarpField f(1, side, side);
  const double to_norm = 2.0 / (side - 1);
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const auto d = draw.displacement(j, i, side);
      f.x(0, i, j) = static_cast<float>(-1.0 + (j + d[0]) * to_norm);
      f.y(0, i, j) = static_cast<float>(-1.0 + (i + d[1]) * to_norm);
    }
  }
  return f;
}

namespace {

WaveDraw draw_waves(int k, double amp_lo, double amp_hi, double freq_lo, double freq_hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(amp_lo, amp_hi), freq(freq_lo, freq_hi),
      phase(0.0, 2.0 * std::numbers::pi);
  WaveDraw d;
  for (int i = 0; i < k; ++i) {
    d.amp_x.push_back(amp(rng));
    d.freq_x.push_back(freq(rng));
    d.phase_x.push_back(phase(rng));
  }
  for (int i = 0; i < k; ++i) {
    d.amp_y.push_back(amp(rng));
    d.freq_y.push_back(freq(rng));
    d.phase_y.push_back(phase(rng));
  }
  return d;
}

}  // namespace

DeformedDataset generate_deformed_mnist(const DeformSpec& spec, const Tensor& base, std::span<const int> labels) {
  spec.validate();
  if (base.rank() != 4 || base.dim(0) == 0) throw InvalidInput("generate_deformed_mnist: empty base set");
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(base.dim(0))) {
    throw InvalidInput("generate_deformed_mnist: label count mismatch");
  }
  const int n = base.dim(0), c = base.dim(1), side = spec.side;
  const int total = n * spec.copies;
  DeformedDataset out;
  out.images = Tensor({total, c, side, side});
  std::mt19937_64 rng(spec.seed);
  const std::size_t image_len = static_cast<std::size_t>(c) * side * side;
  int row = 0;
  for (int copy = 0; copy < spec.copies; ++copy) {
    for (int b = 0; b < n; ++b, ++row) {
      WaveDraw draw = draw_waves(spec.num_waves, spec.amp_lo, spec.amp_hi, spec.freq_lo, spec.freq_hi, rng);
      const Tensor warped = bilinear_sample(base.rows(b, b + 1), sinusoid_field(draw, side));
      std::copy_n(warped.data(), image_len, out.images.data() + row * image_len);
      out.labels.push_back(labels.empty() ? 0 : labels[b]);
      out.source_index.push_back(b);
      out.draws.push_back(std::move(draw));
    }
  }
  return out;
}

namespace {

std::vector<unsigned char> read_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> data;
  unsigned char buf[1 << 16];
  int got;
  while ((got = gzread(f, buf, sizeof buf)) > 0) data.insert(data.end(), buf, buf + got);
  gzclose(f);
  if (got < 0) throw std::runtime_error("failed to decompress " + path);
  return data;
}

std::uint32_t be32(const std::vector<unsigned char>& d, std::size_t at) {
  if (at + 4 > d.size()) throw InvalidInput("IDX: truncated header");
  return (std::uint32_t{d[at]} << 24) | (std::uint32_t{d[at + 1]} << 16) | (std::uint32_t{d[at + 2]} << 8) | d[at + 3];
}

}  // namespace

LabeledImages read_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_gz(images_path);
  const auto lab = read_gz(labels_path);
  if (be32(img, 0) != 0x803) throw InvalidInput(images_path + ": not an IDX3 ubyte file");
  if (be32(lab, 0) != 0x801) throw InvalidInput(labels_path + ": not an IDX1 ubyte file");
  const int n = static_cast<int>(be32(img, 4)), h = static_cast<int>(be32(img, 8)), w = static_cast<int>(be32(img, 12));
  if (static_cast<int>(be32(lab, 4)) != n) throw InvalidInput("IDX: image/label count mismatch");
  if (img.size() < 16 + static_cast<std::size_t>(n) * h * w || lab.size() < 8 + static_cast<std::size_t>(n)) {
    throw InvalidInput("IDX: truncated payload");
  }
  LabeledImages out{Tensor({n, 1, h, w}), std::vector<int>(n)};
  for (std::size_t i = 0; i < out.images.size(); ++i) out.images[i] = img[16 + i] / 255.0f;
  for (int i = 0; i < n; ++i) out.labels[i] = lab[8 + i];
  return out;
}

LabeledImages select_label(const LabeledImages& data, int label) {
  std::vector<int> keep;
  for (int i = 0; i < static_cast<int>(data.labels.size()); ++i) {
    if (data.labels[i] == label) keep.push_back(i);
  }
  Shape s = data.images.shape();
  s[0] = static_cast<int>(keep.size());
  LabeledImages out{Tensor(s), std::vector<int>(keep.size(), label)};
  const std::size_t len = data.images.size() / std::max(data.images.dim(0), 1);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(data.images.data() + keep[k] * len, len, out.images.data() + k * len);
  }
  return out;
}

// -------------------------------------------------------------- image folders

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".pgm" || ext == ".ppm";
}

std::vector<std::string> list_images(const std::string& path) {
  if (!fs::is_directory(path)) throw InvalidInput("not a directory: " + path);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInput("no images found in " + path);
  return files;
}

// Returns false when the file cannot be decoded.
bool decode(const std::string& file, int side, int channels, float* dst, std::array<int, 2>& size) {
  cv::Mat img = cv::imread(file, channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (img.empty()) return false;
  size = {img.cols, img.rows};
  const int s = std::min(img.cols, img.rows);
  cv::Mat crop = img(cv::Rect((img.cols - s) / 2, (img.rows - s) / 2, s, s));
  cv::Mat resized;
  cv::resize(crop, resized, cv::Size(side, side), 0, 0, s > side ? cv::INTER_AREA : cv::INTER_LINEAR);
  if (channels == 3) cv::cvtColor(resized, resized, cv::COLOR_BGR2RGB);
  for (int i = 0; i < side; ++i) {
    const unsigned char* row = resized.ptr<unsigned char>(i);
    for (int j = 0; j < side; ++j) {
      for (int c = 0; c < channels; ++c) {
        dst[(static_cast<std::size_t>(c) * side + i) * side + j] = row[j * channels + c] / 255.0f;
      }
    }
  }
  return true;
}

ImageFolder decode_all(std::span<const std::string> files, int side, int channels) {
  ImageFolder out;
  std::vector<float> pixels;
  const std::size_t len = static_cast<std::size_t>(channels) * side * side;
  std::vector<float> buf(len);
  for (const auto& file : files) {
    std::array<int, 2> size{};
    if (!decode(file, side, channels, buf.data(), size)) {
      std::cerr << "warning: skipping unreadable image " << file << '\n';
      continue;
    }
    pixels.insert(pixels.end(), buf.begin(), buf.end());
    out.ids.push_back(fs::path(file).filename().string());
    out.original_sizes.push_back(size);
  }
  out.images = Tensor({static_cast<int>(out.ids.size()), channels, side, side});
  std::copy(pixels.begin(), pixels.end(), out.images.data());
  return out;
}

}  // namespace

ImageFolder load_image_folder(const std::string& path, int side, int channels) {
  const auto files = list_images(path);
  ImageFolder out = decode_all(files, side, channels);
  if (out.ids.empty()) throw InvalidInput("no readable images in " + path);
  return out;
}

ImageFolderStream::ImageFolderStream(const std::string& path, int side, int channels)
    : files_(list_images(path)), side_(side), channels_(channels) {}

bool ImageFolderStream::next(int batch_size, ImageFolder& out) {
  if (cursor_ >= files_.size()) return false;
  const std::size_t end = std::min(files_.size(), cursor_ + static_cast<std::size_t>(batch_size));
  out = decode_all(std::span<const std::string>(files_).subspan(cursor_, end - cursor_), side_, channels_);
  cursor_ = end;
  return true;
}

Tensor load_image(const std::string& file, int side, int channels) {
  Tensor out({1, channels, side, side});
  std::array<int, 2> size{};
  if (!decode(file, side, channels, out.data(), size)) throw InvalidInput("cannot read image " + file);
  return out;
}

// ------------------------------------------------------------------ landmarks

std::map<std::string, LandmarkSet> load_landmarks(const std::string& path, bool interleaved) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::map<std::string, LandmarkSet> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (line_no == 1 && tokens.size() == 1) continue;  // record count
    if (tokens[0] == "lefteye_x") continue;            // column names
    if (tokens.size() != 11) {
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected an id and 10 coordinates");
    }
    double v[10];
    for (int k = 0; k < 10; ++k) {
      try {
        std::size_t used = 0;
        v[k] = std::stod(tokens[k + 1], &used);
        if (used != tokens[k + 1].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InvalidInput(path + ":" + std::to_string(line_no) + ": bad coordinate '" + tokens[k + 1] + "'");
      }
    }
    LandmarkSet s;
    for (int p = 0; p < 5; ++p) s.points[p] = interleaved ? Point2{v[2 * p], v[2 * p + 1]} : Point2{v[p], v[5 + p]};
    out[tokens[0]] = s;
  }
  return out;
}

LandmarkSet to_crop_frame(const LandmarkSet& original, int width, int height, int side) {
  const int s = std::min(width, height);
  const double x0 = (width - s) / 2, y0 = (height - s) / 2;
  const double scale = static_cast<double>(side) / s;
  LandmarkSet out;
  out.clamped = original.clamped;
  for (int p = 0; p < 5; ++p) {
    double x = (original.points[p].x - x0) * scale;
    double y = (original.points[p].y - y0) * scale;
    const double cx = std::clamp(x, 0.0, side - 1.0), cy = std::clamp(y, 0.0, side - 1.0);
    if (cx != x || cy != y) out.clamped = true;
    out.points[p] = {cx, cy};
  }
  return out;
}

// ---------------------------------------------------------------------- split

std::vector<std::vector<std::size_t>> split(std::size_t n, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw InvalidInput("split: no fractions");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidInput("split: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split: fractions must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  std::size_t begin = 0;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cumulative += fractions[k];
    const std::size_t end = k + 1 == fractions.size() ? n : static_cast<std::size_t>(std::llround(cumulative * n));
    parts[k].assign(order.begin() + begin, order.begin() + std::max(begin, end));
    std::sort(parts[k].begin(), parts[k].end());
    begin = std::max(begin, end);
  }
  return parts;
}

// ---------------------------------------------------------------------- cache

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_cache(const std::string& dir, const DatasetCache& cache) {
  fs::create_directories(dir);
  const int n = cache.images.dim(0);
  if (static_cast<int>(cache.labels.size()) != n || static_cast<int>(cache.ids.size()) != n ||
      static_cast<int>(cache.partition.size()) != n) {
    throw InvalidInput("write_cache: per-item metadata does not match image count");
  }
  {
    std::ofstream os(fs::path(dir) / "images.f32", std::ios::binary);
    os.write(reinterpret_cast<const char*>(cache.images.data()),
             static_cast<std::streamsize>(cache.images.size() * sizeof(float)));
    if (!os) throw std::runtime_error("failed to write images.f32 in " + dir);
  }
  {
    std::ofstream os(fs::path(dir) / "labels.i32", std::ios::binary);
    os.write(reinterpret_cast<const char*>(cache.labels.data()),
             static_cast<std::streamsize>(cache.labels.size() * sizeof(std::int32_t)));
    if (!os) throw std::runtime_error("failed to write labels.i32 in " + dir);
  }
  nlohmann::json manifest{{"version", 1},
                          {"shape", cache.images.shape()},
                          {"ids", cache.ids},
                          {"split", cache.partition},
                          {"spec", cache.spec},
                          {"spec_hash", cache.spec_hash}};
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(1) << '\n';
  if (!os) throw std::runtime_error("failed to write manifest.json in " + dir);
}

DatasetCache read_cache(const std::string& dir) {
  std::ifstream ms(fs::path(dir) / "manifest.json");
  if (!ms) throw InvalidInput("no dataset manifest in " + dir);
  const auto manifest = nlohmann::json::parse(ms);
  if (manifest.value("version", 0) != 1) throw InvalidInput("unsupported dataset cache version in " + dir);
  DatasetCache c;
  c.images = Tensor(manifest.at("shape").get<Shape>());
  c.ids = manifest.at("ids").get<std::vector<std::string>>();
  c.partition = manifest.at("split").get<std::vector<int>>();
  c.spec = manifest.value("spec", nlohmann::json::object());
  c.spec_hash = manifest.value("spec_hash", std::string());
  c.labels.resize(c.ids.size());
  std::ifstream is(fs::path(dir) / "images.f32", std::ios::binary);
  if (!is.read(reinterpret_cast<char*>(c.images.data()), static_cast<std::streamsize>(c.images.size() * sizeof(float)))) {
    throw InvalidInput("truncated images.f32 in " + dir);
  }
  std::ifstream ls(fs::path(dir) / "labels.i32", std::ios::binary);
  if (!ls.read(reinterpret_cast<char*>(c.labels.data()), static_cast<std::streamsize>(c.labels.size() * sizeof(std::int32_t)))) {
    throw InvalidInput("truncated labels.i32 in " + dir);
  }
  return c;
}

// --------------------------------------------------- synthetic landmark faces

LandmarkSet canonical_face_landmarks(int side) {
  const double s = side / 64.0;
  LandmarkSet l;
  l.points = {Point2{22 * s, 26 * s}, Point2{42 * s, 26 * s}, Point2{32 * s, 36 * s}, Point2{24 * s, 45 * s},
              Point2{40 * s, 45 * s}};
  return l;
}

Tensor canonical_face(int side) {
  const double s = side / 64.0;
  const auto lm = canonical_face_landmarks(side).points;
  Tensor img({1, 1, side, side}, 0.1f);
  auto disk = [&](double cx, double cy, double r, float v) {
    for (int i = 0; i < side; ++i) {
      for (int j = 0; j < side; ++j) {
        if ((j - cx) * (j - cx) + (i - cy) * (i - cy) <= r * r) img.at(0, 0, i, j) = v;
      }
    }
  };
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double u = (j - 32 * s) / (20 * s), v = (i - 34 * s) / (25 * s);
      if (u * u + v * v <= 1.0) img.at(0, 0, i, j) = 0.75f;
    }
  }
  disk(lm[0].x, lm[0].y, 3.5 * s, 0.15f);
  disk(lm[1].x, lm[1].y, 3.5 * s, 0.15f);
  disk(lm[2].x, lm[2].y, 2.5 * s, 0.45f);
  for (int j = static_cast<int>(lm[3].x); j <= static_cast<int>(lm[4].x); ++j) {
    for (int i = static_cast<int>(lm[3].y - s); i <= static_cast<int>(lm[3].y + s); ++i) img.at(0, 0, i, j) = 0.25f;
  }
  return img;
}

LandmarkDataset make_synthetic_landmark_dataset(int count, std::uint64_t seed, const SyntheticWarpSpec& spec,
                                                int side) {
  const Tensor face = canonical_face(side);
  const auto template_lm = canonical_face_landmarks(side);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rot(-spec.max_rotation, spec.max_rotation), scale(spec.scale_lo, spec.scale_hi),
      shift(-spec.max_shift, spec.max_shift);
  const double to_norm = 2.0 / (side - 1);

  LandmarkDataset out;
  out.images = Tensor({count, 1, side, side});
  out.fields = WarpField(count, side, side);
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  int made = 0;
  while (made < count) {
    const double a = rot(rng), sc = scale(rng), tx = shift(rng), ty = shift(rng);
    const WaveDraw waves = draw_waves(spec.num_waves, spec.amp_lo, spec.amp_hi, spec.freq_lo, spec.freq_hi, rng);
    // Template location of image point p (normalized): A (p + D(p)).
    const double m[6] = {sc * std::cos(a), -sc * std::sin(a), tx, sc * std::sin(a), sc * std::cos(a), ty};
    auto local = [&](double x, double y) {
      const double px = (x + 1) / to_norm, py = (y + 1) / to_norm;
      const auto d = waves.displacement(px, py, side);
      return std::array<double, 2>{x + d[0] * to_norm, y + d[1] * to_norm};
    };
    // Invert A, then solve p + D(p) = r by fixed-point iteration (D is a contraction here).
    const double det = m[0] * m[4] - m[1] * m[3];
    LandmarkSet lm;
    bool inside = true;
    for (int k = 0; k < 5; ++k) {
      const double qx = -1 + template_lm.points[k].x * to_norm, qy = -1 + template_lm.points[k].y * to_norm;
      const double rx = (m[4] * (qx - m[2]) - m[1] * (qy - m[5])) / det;
      const double ry = (-m[3] * (qx - m[2]) + m[0] * (qy - m[5])) / det;
      double px = rx, py = ry;
      for (int it = 0; it < 200; ++it) {
        const auto l = local(px, py);
        px += rx - l[0];
        py += ry - l[1];
      }
      lm.points[k] = {(px + 1) / to_norm, (py + 1) / to_norm};
      if (lm.points[k].x < 0 || lm.points[k].x > side - 1 || lm.points[k].y < 0 || lm.points[k].y > side - 1) {
        inside = false;
      }
    }
    if (!inside) continue;
    for (int i = 0; i < side; ++i) {
      for (int j = 0; j < side; ++j) {
        const auto l = local(-1 + j * to_norm, -1 + i * to_norm);
        out.fields.x(made, i, j) = static_cast<float>(m[0] * l[0] + m[1] * l[1] + m[2]);
        out.fields.y(made, i, j) = static_cast<float>(m[3] * l[0] + m[4] * l[1] + m[5]);
      }
    }
    const Tensor warped = bilinear_sample(face, out.fields.sample(made));
    std::copy_n(warped.data(), plane, out.images.data() + made * plane);
    out.landmarks.push_back(lm);
    ++made;
  }
  return out;
}

}  // namespace dae
