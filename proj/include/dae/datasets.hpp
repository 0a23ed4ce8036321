#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dae/tensor.hpp"
#include "dae/warp_core.hpp"

namespace dae {

// ------------------------------------------------------------ deformed MNIST

/// Random sinusoidal distortion: D_x(x, y) = sum_k a_k sin(2 pi f_k y / H + phi_k),
/// D_y(x, y) = sum_k b_k sin(2 pi g_k x / W + psi_k). Amplitudes are in output
/// pixels, frequencies in cycles per image.
struct DeformSpec {
  int num_waves = 2;
  double amp_lo = 1.0;
  double amp_hi = 3.0;
  double freq_lo = 1.0;
  double freq_hi = 3.0;
  std::uint64_t seed = 0;
  int copies = 1;  // distorted copies per base image
  int side = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const DeformSpec& s);
void from_json(const nlohmann::json& j, DeformSpec& s);

/// One drawn distortion (K waves per axis).
struct WaveDraw {
  std::vector<double> amp_x, freq_x, phase_x;
  std::vector<double> amp_y, freq_y, phase_y;

  /// Displacement in pixels at output pixel (x, y) of a side x side image.
  std::array<double, 2> displacement(double x, double y, int side) const;
};

/// Sampling field p -> p + D(p) in normalized coordinates.
WarpField sinusoid_field(const WaveDraw& draw, int side);

struct DeformedDataset {
  Tensor images;               // N x C x side x side in [0, 1]
  std::vector<int> labels;
  std::vector<int> source_index;
  std::vector<WaveDraw> draws;
};

/// Resamples each base image (N x C x h x w, [0, 1]) to side x side through a
/// random sinusoidal field. Pure function of (spec, base).
DeformedDataset generate_deformed_mnist(const DeformSpec& spec, const Tensor& base, std::span<const int> labels);

struct LabeledImages {
  Tensor images;  // N x 1 x 28 x 28 in [0, 1]
  std::vector<int> labels;
};

/// Reads an IDX image/label pair (plain or gzip-compressed).
LabeledImages read_mnist_idx(const std::string& images_path, const std::string& labels_path);
LabeledImages select_label(const LabeledImages& data, int label);

// -------------------------------------------------------------- image folders

struct ImageFolder {
  std::vector<std::string> ids;  // file names, lexicographic order
  Tensor images;                 // N x C x side x side
  std::vector<std::array<int, 2>> original_sizes;  // (width, height)
};

/// Decode, center-crop to a square, resize to side x side and scale to [0, 1].
/// Unreadable files are skipped with a warning; an empty folder is an error.
ImageFolder load_image_folder(const std::string& path, int side = 64, int channels = 3);

/// Batch-wise reader over a folder, same ordering and preprocessing.
class ImageFolderStream {
 public:
  ImageFolderStream(const std::string& path, int side = 64, int channels = 3);
  bool next(int batch_size, ImageFolder& out);
  std::size_t size() const { return files_.size(); }

 private:
  std::vector<std::string> files_;
  std::size_t cursor_ = 0;
  int side_, channels_;
};

/// Reads one image file with the folder preprocessing; returns 1 x C x side x side.
Tensor load_image(const std::string& file, int side = 64, int channels = 3);

// ------------------------------------------------------------------ landmarks

struct Point2 {
  double x = 0;
  double y = 0;
};

/// Left eye, right eye, nose, left mouth corner, right mouth corner.
struct LandmarkSet {
  std::array<Point2, 5> points{};
  bool clamped = false;
};

/// One line per image: id followed by x1..x5 y1..y5, or (x, y) pairs when
/// `interleaved`. A leading count line and a column-name header are skipped.
std::map<std::string, LandmarkSet> load_landmarks(const std::string& path, bool interleaved = false);

/// Maps original-image coordinates into the centre-cropped side x side frame,
/// clamping to [0, side - 1] and flagging any clamped point.
LandmarkSet to_crop_frame(const LandmarkSet& original, int width, int height, int side = 64);

// ---------------------------------------------------------------------- split

/// Seeded disjoint partition of [0, n) with the given fractions (sum 1).
/// Each partition is returned in ascending index order.
std::vector<std::vector<std::size_t>> split(std::size_t n, std::span<const double> fractions, std::uint64_t seed);

// ---------------------------------------------------------------------- cache

/// Directory of raw float32 tensors plus manifest.json.
struct DatasetCache {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<int> partition;  // split index per item
  nlohmann::json spec;
  std::string spec_hash;
};

void write_cache(const std::string& dir, const DatasetCache& cache);
DatasetCache read_cache(const std::string& dir);

/// FNV-1a 64-bit digest as 16 hex characters.
std::string fnv1a_hex(const std::string& bytes);

// --------------------------------------------------- synthetic landmark faces

/// Procedural face template (side x side, one channel) and its five landmarks
/// in pixel coordinates.
Tensor canonical_face(int side = 64);
LandmarkSet canonical_face_landmarks(int side = 64);

struct SyntheticWarpSpec {
  double max_rotation = 0.25;  // radians
  double scale_lo = 0.85;
  double scale_hi = 1.15;
  double max_shift = 0.1;      // normalized units
  int num_waves = 2;
  double amp_lo = 0.5;         // pixels
  double amp_hi = 1.5;
  double freq_lo = 1.0;
  double freq_hi = 2.0;
};

struct LandmarkDataset {
  Tensor images;  // N x 1 x side x side
  WarpField fields;
  std::vector<LandmarkSet> landmarks;  // image-frame pixels
};

/// Images of the canonical face under known affine + sinusoidal fields, with the
/// landmarks moved accordingly (each field is inverted at the template landmarks).
LandmarkDataset make_synthetic_landmark_dataset(int count, std::uint64_t seed, const SyntheticWarpSpec& spec = {},
                                                int side = 64);

}  // namespace dae
