#include "fedbeat/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fedbeat/errors.hpp"
#include "fedbeat/nn.hpp"
#include "fedbeat/rng.hpp"

namespace fedbeat::data {

namespace {

void check_classes(int num_classes) {
  if (num_classes < 2) throw InputError("num_classes must be at least 2");
}

// Per-class projection matrices W_c (d x C), drawn once per noise seed.
class ProjectionBank {
 public:
  ProjectionBank(std::size_t input_dim, int num_classes, std::uint64_t seed)
      : d_(input_dim), c_(static_cast<std::size_t>(num_classes)), w_(c_ * d_ * c_) {
    auto gen = rng::stream(seed, rng::Purpose::noise_projection);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : w_) v = normal(gen);
  }

  std::size_t input_dim() const noexcept { return d_; }

  std::vector<double> flip(std::span<const double> x, int clean, double q, double sharpness) const {
    const auto y = static_cast<std::size_t>(clean);
    double norm = 0.0;
    for (double v : x) norm += v * v;
    norm = std::sqrt(norm);
    const double scale = sharpness / (norm > 0.0 ? norm : 1.0);

    std::vector<double> scores(c_, 0.0);
    const double* w = w_.data() + y * d_ * c_;
    for (std::size_t i = 0; i < d_; ++i) {
      const double xi = x[i] * scale;
      for (std::size_t k = 0; k < c_; ++k) scores[k] += xi * w[i * c_ + k];
    }
    // Softmax over the non-clean classes only.
    scores[y] = -std::numeric_limits<double>::infinity();
    nn::softmax_inplace(scores);
    for (auto& s : scores) s *= q;
    scores[y] = 1.0 - q;
    return scores;
  }

 private:
  std::size_t d_;
  std::size_t c_;
  std::vector<double> w_;
};

double draw_rate(std::span<const double> x, int clean, const NoiseConfig& cfg) {
  if (cfg.rate_std == 0.0) return std::clamp(cfg.target_rate, 0.0, 1.0);
  auto gen = rng::stream(cfg.seed, rng::Purpose::noise_rate,
                         {rng::hash_features(x), static_cast<std::uint64_t>(clean)});
  std::normal_distribution<double> normal(cfg.target_rate, cfg.rate_std);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double q = normal(gen);
    if (q >= 0.0 && q <= 1.0) return q;
  }
  return std::clamp(cfg.target_rate, 0.0, 1.0);
}

void validate_noise(const NoiseConfig& cfg) {
  if (!(cfg.target_rate >= 0.0 && cfg.target_rate < 1.0)) throw InputError("noise target_rate must be in [0, 1)");
  if (!(cfg.rate_std >= 0.0)) throw InputError("noise rate_std must be non-negative");
  if (!(cfg.sharpness >= 0.0)) throw InputError("noise sharpness must be non-negative");
}

float parse_float(const std::string& tok, std::size_t record) {
  errno = 0;
  char* end = nullptr;
  const float v = std::strtof(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE) {
    throw DataError("record " + std::to_string(record) + ": bad feature value '" + tok + "'");
  }
  return v;
}

long parse_int(const std::string& tok, std::size_t record, const char* what) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE) {
    throw DataError("record " + std::to_string(record) + ": bad " + what + " '" + tok + "'");
  }
  return v;
}

}  // namespace

std::size_t Federation::total_samples() const noexcept {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

BlobSplit generate_blob_split(int num_classes, std::size_t input_dim, std::size_t train_per_class,
                              std::size_t test_per_class, double spread, std::uint64_t seed, double mean_scale) {
  check_classes(num_classes);
  if (input_dim < 2) throw InputError("input_dim must be at least 2");
  if (spread < 0.0) throw InputError("spread must be non-negative");

  auto gen = rng::stream(seed, rng::Purpose::blobs);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(num_classes), std::vector<double>(input_dim));
  for (auto& m : means) {
    for (auto& v : m) v = mean_scale * normal(gen);
  }

  BlobSplit out;
  out.train.reserve(train_per_class * means.size());
  out.test.reserve(test_per_class * means.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto& mean = means[static_cast<std::size_t>(c)];
    for (std::size_t n = 0; n < train_per_class + test_per_class; ++n) {
      Sample s;
      s.x.resize(input_dim);
      for (std::size_t i = 0; i < input_dim; ++i) {
        s.x[i] = static_cast<double>(static_cast<float>(mean[i] + spread * normal(gen)));
      }
      s.clean_label = c;
      s.noisy_label = c;
      (n < train_per_class ? out.train : out.test).push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> generate_blobs(int num_classes, std::size_t input_dim, std::size_t per_class_count,
                                   double spread, std::uint64_t seed, double mean_scale) {
  return generate_blob_split(num_classes, input_dim, per_class_count, 0, spread, seed, mean_scale).train;
}

std::vector<double> flip_distribution(std::span<const double> x, int clean_label, const NoiseConfig& cfg,
                                      int num_classes) {
  check_classes(num_classes);
  validate_noise(cfg);
  if (clean_label < 0 || clean_label >= num_classes) throw InputError("clean label out of range");
  const ProjectionBank bank(x.size(), num_classes, cfg.seed);
  return bank.flip(x, clean_label, draw_rate(x, clean_label, cfg), cfg.sharpness);
}

GroundTruthNoise corrupt_idn(std::vector<Sample>& samples, const NoiseConfig& cfg, int num_classes,
                             std::span<const std::uint64_t> keys) {
  check_classes(num_classes);
  validate_noise(cfg);
  if (!keys.empty() && keys.size() != samples.size()) throw InputError("corrupt_idn: one key per sample required");
  GroundTruthNoise truth;
  truth.flip.reserve(samples.size());
  if (samples.empty()) return truth;

  const ProjectionBank bank(samples.front().x.size(), num_classes, cfg.seed);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    if (s.x.size() != bank.input_dim()) throw InputError("corrupt_idn: inconsistent feature dimensions");
    if (s.clean_label < 0 || s.clean_label >= num_classes) throw InputError("corrupt_idn: clean label out of range");
    auto flip = bank.flip(s.x, s.clean_label, draw_rate(s.x, s.clean_label, cfg), cfg.sharpness);

    const std::uint64_t key = keys.empty() ? i : keys[i];
    auto gen = rng::stream(cfg.seed, rng::Purpose::noise_draw, {key});
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    double acc = 0.0;
    int label = s.clean_label;
    for (int k = 0; k < num_classes; ++k) {
      acc += flip[static_cast<std::size_t>(k)];
      if (u < acc) {
        label = k;
        break;
      }
    }
    s.noisy_label = label;
    truth.flip.push_back(std::move(flip));
  }
  return truth;
}

std::vector<ClientDataset> partition_iid(const std::vector<Sample>& samples, int num_clients, std::uint64_t seed,
                                         int num_classes) {
  if (num_clients < 1) throw InputError("partition_iid: need at least one client");
  check_classes(num_classes);
  auto gen = rng::stream(seed, rng::Purpose::partition, {0});

  // Shuffle within each class, then deal the concatenation round-robin so every
  // client gets an equal share of every class (up to one sample).
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].clean_label;
    if (y < 0 || y >= num_classes) throw InputError("partition_iid: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  std::vector<ClientDataset> clients(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < num_clients; ++k) clients[static_cast<std::size_t>(k)].client_id = k;

  std::size_t next = 0;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), gen);
    for (auto i : idx) {
      clients[next % clients.size()].samples.push_back(samples[i]);
      ++next;
    }
  }
  return clients;
}

std::vector<ClientDataset> partition_dirichlet(const std::vector<Sample>& samples, int num_clients, double alpha,
                                               std::uint64_t seed, int num_classes, int max_retries) {
  if (num_clients < 1) throw InputError("partition_dirichlet: need at least one client");
  if (!(alpha > 0.0)) throw InputError("partition_dirichlet: alpha must be positive");
  check_classes(num_classes);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].clean_label;
    if (y < 0 || y >= num_classes) throw InputError("partition_dirichlet: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  const auto k_clients = static_cast<std::size_t>(num_clients);

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    auto gen = rng::stream(seed, rng::Purpose::partition, {1, static_cast<std::uint64_t>(attempt)});
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<std::vector<std::size_t>> assigned(k_clients);

    for (const auto& cls : by_class) {
      std::vector<std::size_t> idx = cls;
      std::shuffle(idx.begin(), idx.end(), gen);
      std::vector<double> props(k_clients);
      double total = 0.0;
      for (auto& p : props) {
        p = gamma(gen);
        total += p;
      }
      if (!(total > 0.0)) {
        // All gamma draws underflowed (tiny alpha); put the class on one client.
        std::fill(props.begin(), props.end(), 0.0);
        props[std::uniform_int_distribution<std::size_t>(0, k_clients - 1)(gen)] = 1.0;
        total = 1.0;
      }
      // Split points at floor(cumulative proportion * n).
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t k = 0; k < k_clients; ++k) {
        cum += props[k] / total;
        std::size_t end = (k + 1 == k_clients)
                              ? idx.size()
                              : std::min(idx.size(), static_cast<std::size_t>(std::floor(cum * static_cast<double>(idx.size()))));
        end = std::max(end, start);
        for (std::size_t j = start; j < end; ++j) assigned[k].push_back(idx[j]);
        start = end;
      }
    }

    const bool any_empty =
        !samples.empty() && std::any_of(assigned.begin(), assigned.end(), [](const auto& a) { return a.empty(); });
    if (any_empty) continue;

    std::vector<ClientDataset> clients(k_clients);
    for (std::size_t k = 0; k < k_clients; ++k) {
      clients[k].client_id = static_cast<int>(k);
      clients[k].samples.reserve(assigned[k].size());
      for (auto i : assigned[k]) clients[k].samples.push_back(samples[i]);
    }
    return clients;
  }
  throw ConfigError("partition_dirichlet: could not avoid empty clients after " + std::to_string(max_retries) +
                    " retries; raise alpha_dir or lower the client count");
}

void save_dataset(const std::filesystem::path& path, const Federation& fed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << fed.num_classes << ' ' << fed.input_dim << ' ' << fed.total_samples() << '\n';
  char buf[64];
  for (const auto& client : fed.clients) {
    for (const auto& s : client.samples) {
      if (s.x.size() != fed.input_dim) throw InputError("save_dataset: sample dimension does not match federation");
      out << client.client_id << ' ' << s.clean_label << ' ' << s.noisy_label;
      for (double v : s.x) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        out << ' ' << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

Federation load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset file not found: '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "': missing header line");
  Federation fed;
  std::size_t n = 0;
  {
    std::istringstream hs(line);
    long c = 0;
    long d = 0;
    long long count = 0;
    std::string extra;
    if (!(hs >> c >> d >> count) || (hs >> extra) || c < 2 || d < 1 || count < 0) {
      throw DataError("'" + path.string() + "': malformed header, expected `C d N`");
    }
    fed.num_classes = static_cast<int>(c);
    fed.input_dim = static_cast<std::size_t>(d);
    n = static_cast<std::size_t>(count);
  }

  const std::size_t fields = 3 + fed.input_dim;
  std::vector<std::string> toks;
  for (std::size_t record = 0; record < n; ++record) {
    if (!std::getline(in, line)) {
      throw DataError("'" + path.string() + "': record " + std::to_string(record) + " missing (header declares " +
                      std::to_string(n) + ")");
    }
    toks.clear();
    std::istringstream ls(line);
    for (std::string t; ls >> t;) toks.push_back(std::move(t));
    if (toks.size() != fields) {
      throw DataError("'" + path.string() + "': record " + std::to_string(record) + " has " +
                      std::to_string(toks.size()) + " fields, expected " + std::to_string(fields));
    }
    const long cid = parse_int(toks[0], record, "client id");
    Sample s;
    s.clean_label = static_cast<int>(parse_int(toks[1], record, "label"));
    s.noisy_label = static_cast<int>(parse_int(toks[2], record, "noisy label"));
    if (s.clean_label < 0 || s.clean_label >= fed.num_classes || s.noisy_label < 0 ||
        s.noisy_label >= fed.num_classes) {
      throw DataError("'" + path.string() + "': record " + std::to_string(record) + " has a label out of range");
    }
    s.x.resize(fed.input_dim);
    for (std::size_t i = 0; i < fed.input_dim; ++i) s.x[i] = static_cast<double>(parse_float(toks[3 + i], record));

    // Records are grouped by client in file order.
    if (fed.clients.empty() || fed.clients.back().client_id != cid) {
      auto existing = std::find_if(fed.clients.begin(), fed.clients.end(),
                                   [cid](const ClientDataset& c) { return c.client_id == cid; });
      if (existing != fed.clients.end()) {
        existing->samples.push_back(std::move(s));
        continue;
      }
      fed.clients.push_back(ClientDataset{static_cast<int>(cid), {}});
    }
    fed.clients.back().samples.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw DataError("'" + path.string() + "': trailing data after " + std::to_string(n) + " records");
    }
  }
  return fed;
}

}  // namespace fedbeat::data
