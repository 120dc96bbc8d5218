#pragma once

// Synthetic federated datasets: Gaussian class blobs, instance-dependent label
// corruption, IID / Dirichlet client partitioning and a plain-text file format.
//
// Labels are 0-based class indices throughout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace fedbeat::data {

struct Sample {
  std::vector<double> x;
  int clean_label = 0;
  int noisy_label = 0;
  std::optional<int> pseudo_label;
  std::optional<double> confidence;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct ClientDataset {
  int client_id = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

/// A set of client datasets plus the shape they share.
struct Federation {
  int num_classes = 2;
  std::size_t input_dim = 2;
  std::vector<ClientDataset> clients;

  std::size_t total_samples() const noexcept;
  friend bool operator==(const Federation&, const Federation&) = default;
};

struct NoiseConfig {
  double target_rate = 0.0;
  double rate_std = 0.1;
  std::uint64_t seed = 0;
  /// Scale of the projection scores fed to the flip softmax; larger values
  /// concentrate each sample's flips on fewer classes.
  double sharpness = 5.0;
};

/// Per-sample distribution the noisy label was drawn from.
struct GroundTruthNoise {
  std::vector<std::vector<double>> flip;
};

/// Gaussian class clusters. Class means are standard-normal vectors scaled by
/// `mean_scale`; samples are mean + spread * N(0, I). Features are rounded to
/// float precision so they survive the text format exactly.
std::vector<Sample> generate_blobs(int num_classes, std::size_t input_dim, std::size_t per_class_count,
                                   double spread, std::uint64_t seed, double mean_scale = 1.0);

/// Draws `train_per_class + test_per_class` samples per class from the same
/// blobs and splits each class into a train and a test part.
struct BlobSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
};
BlobSplit generate_blob_split(int num_classes, std::size_t input_dim, std::size_t train_per_class,
                              std::size_t test_per_class, double spread, std::uint64_t seed,
                              double mean_scale = 1.0);

/// Flip distribution of one sample under the noise model. Depends only on
/// (x, clean label, cfg.seed).
std::vector<double> flip_distribution(std::span<const double> x, int clean_label, const NoiseConfig& cfg,
                                      int num_classes);

/// Sets noisy_label on every sample. The label draw for samples[i] uses the
/// stream keyed by (cfg.seed, keys[i]); with no keys the position is used.
GroundTruthNoise corrupt_idn(std::vector<Sample>& samples, const NoiseConfig& cfg, int num_classes,
                             std::span<const std::uint64_t> keys = {});

std::vector<ClientDataset> partition_iid(const std::vector<Sample>& samples, int num_clients, std::uint64_t seed,
                                         int num_classes);

std::vector<ClientDataset> partition_dirichlet(const std::vector<Sample>& samples, int num_clients, double alpha,
                                               std::uint64_t seed, int num_classes, int max_retries = 100);

/// Text format: header `C d N`, then one record `client_id y y_noisy x_1 ... x_d`
/// per sample. Features are written with 9 significant digits.
void save_dataset(const std::filesystem::path& path, const Federation& fed);
Federation load_dataset(const std::filesystem::path& path);

}  // namespace fedbeat::data
