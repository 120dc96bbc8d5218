#include "fedbeat/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

#include "fedbeat/errors.hpp"
#include "fedbeat/metrics.hpp"
#include "fedbeat/rng.hpp"

namespace fedbeat::experiment {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

long long to_int(std::string_view key, std::string_view v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <class T>
T positive(std::string_view key, T v) {
  if (!(v > T{0})) throw ConfigError(std::string(key) + ": must be positive");
  return v;
}

// Binds each `section.key` to a setter and a printer.
struct Field {
  std::function<void(std::string_view key, std::string_view value, ExperimentConfig&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto num = [&t](std::string name, auto member_ptr, bool must_be_positive) {
      t.emplace_back(name, Field{
                               [member_ptr, must_be_positive](std::string_view key, std::string_view v, C& c) {
                                 auto& dst = std::invoke(member_ptr, c);
                                 using T = std::remove_reference_t<decltype(dst)>;
                                 if constexpr (std::is_floating_point_v<T>) {
                                   dst = to_double(key, v);
                                   if (!(dst >= 0.0)) throw ConfigError(std::string(key) + ": must be non-negative");
                                 } else {
                                   const auto i = to_int(key, v);
                                   if (i < 0) throw ConfigError(std::string(key) + ": must be non-negative");
                                   dst = static_cast<T>(i);
                                 }
                                 if (must_be_positive) positive(key, dst);
                               },
                               [member_ptr](const C& c) {
                                 const auto& v = std::invoke(member_ptr, c);
                                 using T = std::remove_cvref_t<decltype(v)>;
                                 if constexpr (std::is_floating_point_v<T>) return fmt_double(v);
                                 else return std::to_string(v);
                               }});
    };
    auto str = [&t](std::string name, auto member_ptr) {
      t.emplace_back(name, Field{[member_ptr](std::string_view, std::string_view v, C& c) {
                                   std::invoke(member_ptr, c) = std::string(v);
                                 },
                                 [member_ptr](const C& c) { return std::invoke(member_ptr, c); }});
    };

    str("dataset.path", [](auto& c) -> auto& { return c.dataset.path; });
    str("dataset.test_path", [](auto& c) -> auto& { return c.dataset.test_path; });
    num("dataset.num_classes", [](auto& c) -> auto& { return c.dataset.num_classes; }, true);
    num("dataset.input_dim", [](auto& c) -> auto& { return c.dataset.input_dim; }, true);
    num("dataset.per_class", [](auto& c) -> auto& { return c.dataset.per_class; }, true);
    num("dataset.test_per_class", [](auto& c) -> auto& { return c.dataset.test_per_class; }, true);
    num("dataset.spread", [](auto& c) -> auto& { return c.dataset.spread; }, false);
    num("dataset.mean_scale", [](auto& c) -> auto& { return c.dataset.mean_scale; }, false);
    num("dataset.noise_rate", [](auto& c) -> auto& { return c.dataset.noise_rate; }, false);
    num("dataset.noise_std", [](auto& c) -> auto& { return c.dataset.noise_std; }, false);
    num("dataset.noise_sharpness", [](auto& c) -> auto& { return c.dataset.noise_sharpness; }, false);
    t.emplace_back("dataset.partition",
                   Field{[](std::string_view key, std::string_view v, C& c) {
                           if (v == "iid") c.dataset.partition = PartitionKind::iid;
                           else if (v == "dirichlet") c.dataset.partition = PartitionKind::dirichlet;
                           else throw ConfigError(std::string(key) + ": expected iid or dirichlet, got '" + std::string(v) + "'");
                         },
                         [](const C& c) { return std::string(to_string(c.dataset.partition)); }});
    num("dataset.clients", [](auto& c) -> auto& { return c.dataset.clients; }, true);
    num("dataset.alpha_dir", [](auto& c) -> auto& { return c.dataset.alpha_dir; }, true);

    t.emplace_back("method.name",
                   Field{[](std::string_view key, std::string_view v, C& c) {
                           if (v == "fedbeat") c.method.name = Method::fedbeat;
                           else if (v == "fedavg") c.method.name = Method::fedavg;
                           else if (v == "fedprox") c.method.name = Method::fedprox;
                           else throw ConfigError(std::string(key) + ": expected fedbeat, fedavg or fedprox, got '" + std::string(v) + "'");
                         },
                         [](const C& c) { return std::string(to_string(c.method.name)); }});
    t.emplace_back("method.hidden", Field{[](std::string_view key, std::string_view v, C& c) {
                                            c.method.hidden.clear();
                                            if (trim(v).empty()) return;
                                            for (auto item : split_list(v)) {
                                              const auto h = to_int(key, item);
                                              if (h <= 0) throw ConfigError(std::string(key) + ": widths must be positive");
                                              c.method.hidden.push_back(static_cast<std::size_t>(h));
                                            }
                                          },
                                          [](const C& c) {
                                            std::string s;
                                            for (std::size_t i = 0; i < c.method.hidden.size(); ++i) {
                                              if (i) s += ',';
                                              s += std::to_string(c.method.hidden[i]);
                                            }
                                            return s;
                                          }});
    num("method.batch_size", [](auto& c) -> auto& { return c.method.batch_size; }, true);
    num("method.prox_mu", [](auto& c) -> auto& { return c.method.prox_mu; }, false);
    num("method.participation", [](auto& c) -> auto& { return c.method.participation; }, true);
    num("method.warmup_rounds", [](auto& c) -> auto& { return c.method.warmup_rounds; }, true);
    num("method.warmup_epochs", [](auto& c) -> auto& { return c.method.warmup_epochs; }, true);
    num("method.warmup_lr", [](auto& c) -> auto& { return c.method.warmup_lr; }, true);
    num("method.transition_rounds", [](auto& c) -> auto& { return c.method.transition_rounds; }, true);
    num("method.transition_epochs", [](auto& c) -> auto& { return c.method.transition_epochs; }, true);
    num("method.transition_lr", [](auto& c) -> auto& { return c.method.transition_lr; }, true);
    num("method.correction_rounds", [](auto& c) -> auto& { return c.method.correction_rounds; }, true);
    num("method.correction_epochs", [](auto& c) -> auto& { return c.method.correction_epochs; }, true);
    num("method.correction_lr", [](auto& c) -> auto& { return c.method.correction_lr; }, true);
    num("method.ensemble_size", [](auto& c) -> auto& { return c.method.ensemble_size; }, true);
    num("method.tau", [](auto& c) -> auto& { return c.method.tau; }, false);
    t.emplace_back("method.ensemble",
                   Field{[](std::string_view key, std::string_view v, C& c) { c.method.ensemble = to_bool(key, v); },
                         [](const C& c) { return std::string(c.method.ensemble ? "true" : "false"); }});
    num("method.baseline_rounds", [](auto& c) -> auto& { return c.method.baseline_rounds; }, true);
    num("method.baseline_epochs", [](auto& c) -> auto& { return c.method.baseline_epochs; }, true);
    num("method.baseline_lr", [](auto& c) -> auto& { return c.method.baseline_lr; }, true);

    t.emplace_back("run.seeds", Field{[](std::string_view, std::string_view v, C& c) { c.seeds = parse_seed_list(v); },
                                      [](const C& c) {
                                        std::string s;
                                        for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                                          if (i) s += ',';
                                          s += std::to_string(c.seeds[i]);
                                        }
                                        return s;
                                      }});
    str("run.output", [](auto& c) -> auto& { return c.output; });
    return t;
  }();
  return table;
}

void validate(const ExperimentConfig& c) {
  if (c.dataset.num_classes < 2) throw ConfigError("dataset.num_classes: must be at least 2");
  if (c.dataset.input_dim < 2) throw ConfigError("dataset.input_dim: must be at least 2");
  if (!(c.dataset.noise_rate < 1.0)) throw ConfigError("dataset.noise_rate: must be in [0, 1)");
  if (c.method.participation > 1.0) throw ConfigError("method.participation: must be in (0, 1]");
  if (c.method.tau > 1.0) throw ConfigError("method.tau: must be in [0, 1]");
  if (c.seeds.empty()) throw ConfigError("run.seeds: at least one seed required");
}

metrics::RunReport base_report(const ExperimentConfig& cfg, std::uint64_t seed, const PreparedData& d) {
  metrics::RunReport r;
  r.method = std::string(to_string(cfg.method.name));
  r.seed = seed;
  // the output path says where a record went, not how it was produced
  auto snapshot = cfg;
  snapshot.output.clear();
  r.config = to_text(snapshot);
  r.num_samples = d.train.total_samples();
  return r;
}

// Steps 2-3 for one pseudo-labelling arm, reusing an existing warm-up.
void finish_fedbeat(const PreparedData& d, const pipeline::FedBeatConfig& fb, std::uint64_t seed,
                    const pipeline::WarmupResult& warm, const pipeline::EnsembleSpec& ens, metrics::RunReport& r) {
  const pipeline::EnsembleStats stats{warm.mu, pipeline::compute_sigma(warm.local_models, warm.mu)};
  const auto scored = pipeline::score_federation(d.train.clients, stats, ens, seed, fb.workers);
  const auto extracted = pipeline::extract_federation(d.train.clients, scored, ens.tau);
  r.step1_accuracy = metrics::evaluate(warm.mu, d.test);
  r.pseudo_label_accuracy = metrics::pseudo_label_accuracy(extracted.clients);
  r.extracted_count = extracted.total();
  r.round_loss["warmup"] = warm.round_loss;

  std::vector<double> loss2;
  std::vector<double> loss3;
  const auto theta = pipeline::step2_estimate_transition(extracted, d.train.input_dim, d.train.num_classes, fb, seed, &loss2);
  const auto w = pipeline::step3_correct_classifier(d.train.clients, warm.mu, theta, fb, seed, &loss3);
  r.round_loss["transition"] = std::move(loss2);
  r.round_loss["correction"] = std::move(loss3);
  r.final_accuracy = metrics::evaluate(w, d.test);
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

std::string mean_pm_std(const metrics::MetricSummary& s, bool percent) {
  char buf[64];
  const double scale = percent ? 100.0 : 1.0;
  if (s.std) std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", scale * s.mean, scale * *s.std);
  else std::snprintf(buf, sizeof(buf), "%.2f", scale * s.mean);
  return buf;
}

}  // namespace

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::fedbeat: return "fedbeat";
    case Method::fedavg: return "fedavg";
    case Method::fedprox: return "fedprox";
  }
  return "?";
}

std::string_view to_string(PartitionKind p) noexcept {
  return p == PartitionKind::iid ? "iid" : "dirichlet";
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (auto item : split_list(trim(text))) {
    if (item.empty()) throw ConfigError("seeds: empty entry in '" + std::string(text) + "'");
    seeds.push_back(to_u64("seeds", item));
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  return seeds;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  const auto& table = fields();
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;

    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "dataset" && section != "method" && section != "run") {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected `key = value`");
    }
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError("unknown key '" + key + "' (line " + std::to_string(line_no) + ")");
    it->second.set(key, value, cfg);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

pipeline::FedBeatConfig fedbeat_config(const ExperimentConfig& cfg, int workers) {
  const auto& m = cfg.method;
  pipeline::FedBeatConfig fb;
  fb.warmup = {m.warmup_rounds, m.warmup_epochs, m.warmup_lr};
  fb.transition = {m.transition_rounds, m.transition_epochs, m.transition_lr};
  fb.correction = {m.correction_rounds, m.correction_epochs, m.correction_lr};
  fb.ensemble = {m.ensemble_size, m.tau, m.ensemble};
  fb.hidden_dims = m.hidden;
  fb.batch_size = m.batch_size;
  fb.participation = m.participation;
  fb.workers = workers;
  fb.validate();
  return fb;
}

PreparedData prepare_data(const DatasetBlock& b, std::uint64_t seed) {
  PreparedData out;
  if (!b.path.empty()) {
    out.train = data::load_dataset(b.path);
    const std::string test_path = b.test_path.empty() ? b.path + ".test" : b.test_path;
    auto test = data::load_dataset(test_path);
    for (auto& c : test.clients) {
      for (auto& s : c.samples) out.test.push_back(std::move(s));
    }
    if (test.input_dim != out.train.input_dim || test.num_classes != out.train.num_classes) {
      throw DataError("test split '" + test_path + "' does not match the training set shape");
    }
    return out;
  }

  auto split = data::generate_blob_split(b.num_classes, b.input_dim, b.per_class, b.test_per_class, b.spread, seed,
                                         b.mean_scale);
  const std::uint64_t noise_seed = rng::derive(seed, rng::Purpose::noise_rate);
  data::corrupt_idn(split.train, data::NoiseConfig{b.noise_rate, b.noise_std, noise_seed, b.noise_sharpness},
                    b.num_classes);
  out.noise_seed = noise_seed;
  out.train.num_classes = b.num_classes;
  out.train.input_dim = b.input_dim;
  out.train.clients = b.partition == PartitionKind::iid
                          ? data::partition_iid(split.train, b.clients, seed, b.num_classes)
                          : data::partition_dirichlet(split.train, b.clients, b.alpha_dir, seed, b.num_classes);
  out.test = std::move(split.test);
  return out;
}

double realized_noise_rate(const data::Federation& fed) {
  std::size_t flipped = 0;
  const std::size_t n = fed.total_samples();
  for (const auto& c : fed.clients) {
    for (const auto& s : c.samples) flipped += s.noisy_label != s.clean_label ? 1 : 0;
  }
  return n == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(n);
}

void generate_dataset_files(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out) {
  if (!cfg.dataset.path.empty()) throw ConfigError("dataset.path: gen-data generates data; leave path empty");
  const auto d = prepare_data(cfg.dataset, seed);
  data::save_dataset(out, d.train);
  data::save_dataset(out.string() + ".test", data::Federation{d.train.num_classes, d.train.input_dim, {{0, d.test}}});

  json side;
  side["seed"] = seed;
  side["noise_seed"] = *d.noise_seed;
  side["target_rate"] = cfg.dataset.noise_rate;
  side["rate_std"] = cfg.dataset.noise_std;
  side["sharpness"] = cfg.dataset.noise_sharpness;
  side["num_samples"] = d.train.total_samples();
  side["realized_rate"] = realized_noise_rate(d.train);
  std::ofstream s(out.string() + ".noise.json", std::ios::binary | std::ios::trunc);
  if (!s) throw DataError("cannot write noise sidecar next to '" + out.string() + "'");
  s << side.dump() << '\n';
}

metrics::RunReport run_single(const ExperimentConfig& cfg, std::uint64_t seed, int workers) {
  const auto d = prepare_data(cfg.dataset, seed);
  auto r = base_report(cfg, seed, d);
  if (cfg.method.name == Method::fedbeat) {
    const auto fb = fedbeat_config(cfg, workers);
    const auto warm = pipeline::step1_warmup(d.train.clients, d.train.input_dim, d.train.num_classes, fb, seed);
    finish_fedbeat(d, fb, seed, warm, fb.ensemble, r);
    return r;
  }

  const auto spec = pipeline::classifier_spec(d.train.input_dim, d.train.num_classes, cfg.method.hidden);
  fl::FederationState state{nn::init_params(spec, rng::derive(seed, rng::Purpose::init_classifier)), 0, seed};
  fl::RoundOptions opts;
  opts.rounds = cfg.method.baseline_rounds;
  opts.local_epochs = cfg.method.baseline_epochs;
  opts.lr = cfg.method.baseline_lr;
  opts.prox_mu = cfg.method.name == Method::fedprox ? cfg.method.prox_mu : 0.0;
  opts.batch_size = cfg.method.batch_size;
  opts.participation = cfg.method.participation;
  opts.stage = 1;
  opts.workers = workers;
  auto rounds = fl::run_rounds(std::move(state), d.train.clients, fl::LocalContext{fl::LossKind::ce, nullptr}, opts);
  r.round_loss["train"] = std::move(rounds.round_loss);
  r.final_accuracy = metrics::evaluate(rounds.state.global_model, d.test);
  return r;
}

std::vector<metrics::RunReport> run_experiment(const ExperimentConfig& cfg, int workers,
                                               const std::filesystem::path& out) {
  std::vector<metrics::RunReport> reports;
  for (auto seed : cfg.seeds) {
    reports.push_back(run_single(cfg, seed, workers));
    if (!out.empty()) append_lines(out, {to_json_line(reports.back())});
  }
  return reports;
}

std::vector<ThresholdRow> ablate_threshold(const ExperimentConfig& cfg, std::vector<double> taus, int workers) {
  if (taus.empty()) throw ConfigError("taus: at least one threshold required");
  for (double t : taus) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("taus: thresholds must be in [0, 1]");
  }
  std::sort(taus.begin(), taus.end());
  const auto fb = fedbeat_config(cfg, workers);
  std::vector<ThresholdRow> rows;
  for (auto seed : cfg.seeds) {
    const auto d = prepare_data(cfg.dataset, seed);
    const auto warm = pipeline::step1_warmup(d.train.clients, d.train.input_dim, d.train.num_classes, fb, seed);
    const pipeline::EnsembleStats stats{warm.mu, pipeline::compute_sigma(warm.local_models, warm.mu)};
    const auto scored = pipeline::score_federation(d.train.clients, stats, fb.ensemble, seed, workers);
    for (double tau : taus) {
      const auto ex = pipeline::extract_federation(d.train.clients, scored, tau);
      rows.push_back({tau, seed, metrics::pseudo_label_accuracy(ex.clients), ex.total(), d.train.total_samples()});
    }
  }
  return rows;
}

std::vector<metrics::RunReport> ablate_ensemble(const ExperimentConfig& cfg, int workers) {
  auto fb_cfg = cfg;
  fb_cfg.method.name = Method::fedbeat;
  const auto fb = fedbeat_config(fb_cfg, workers);
  std::vector<metrics::RunReport> reports;
  for (auto seed : cfg.seeds) {
    const auto d = prepare_data(cfg.dataset, seed);
    const auto warm = pipeline::step1_warmup(d.train.clients, d.train.input_dim, d.train.num_classes, fb, seed);
    for (bool enabled : {false, true}) {
      // each arm embeds its own config so the record regenerates through run_single
      auto arm_cfg = fb_cfg;
      arm_cfg.method.ensemble = enabled;
      auto r = base_report(arm_cfg, seed, d);
      r.variant = enabled ? "w/ ensemble" : "w/o ensemble";
      auto ens = fb.ensemble;
      ens.enabled = enabled;
      finish_fedbeat(d, fb, seed, warm, ens, r);
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

std::string to_json_line(const metrics::RunReport& r) {
  json j;
  j["kind"] = "run";
  j["method"] = r.method;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["config"] = r.config;
  j["num_samples"] = r.num_samples;
  j["step1_accuracy"] = opt_json(r.step1_accuracy);
  j["pseudo_label_accuracy"] = opt_json(r.pseudo_label_accuracy);
  j["extracted_count"] = r.extracted_count ? json(*r.extracted_count) : json(nullptr);
  j["final_accuracy"] = r.final_accuracy;
  j["round_loss"] = r.round_loss;
  return j.dump();
}

std::string to_json_line(const ThresholdRow& r) {
  json j;
  j["kind"] = "threshold";
  j["tau"] = r.tau;
  j["seed"] = r.seed;
  j["pseudo_label_accuracy"] = opt_json(r.pseudo_label_accuracy);
  j["extracted_count"] = r.extracted_count;
  j["num_samples"] = r.num_samples;
  return j.dump();
}

ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("results file not found: '" + path.string() + "'");
  ResultsFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "run") {
        metrics::RunReport r;
        r.method = j.at("method").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config = j.at("config").get<std::string>();
        r.num_samples = j.at("num_samples").get<std::size_t>();
        r.step1_accuracy = opt_double(j, "step1_accuracy");
        r.pseudo_label_accuracy = opt_double(j, "pseudo_label_accuracy");
        if (!j.at("extracted_count").is_null()) r.extracted_count = j.at("extracted_count").get<std::size_t>();
        r.final_accuracy = j.at("final_accuracy").get<double>();
        r.round_loss = j.at("round_loss").get<std::map<std::string, std::vector<double>>>();
        out.runs.push_back(std::move(r));
      } else if (kind == "threshold") {
        ThresholdRow r;
        r.tau = j.at("tau").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.pseudo_label_accuracy = opt_double(j, "pseudo_label_accuracy");
        r.extracted_count = j.at("extracted_count").get<std::size_t>();
        r.num_samples = j.at("num_samples").get<std::size_t>();
        out.thresholds.push_back(r);
      } else {
        throw DataError("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw DataError("'" + path.string() + "' line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("'" + path.string() + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void append_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot open results file '" + path.string() + "'");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

std::string format_percent(std::optional<double> v) { return v ? pct(*v) + "%" : std::string("n/a"); }

std::string summary_line(std::string_view label, std::span<const metrics::RunReport> reports) {
  const auto s = metrics::aggregate_seeds(reports);
  std::string line(label);
  line += ": ";
  if (auto it = s.find("pseudo_label_accuracy"); it != s.end()) line += pct(it->second.mean) + "%";
  else line += "n/a";
  line += " / ";
  if (auto it = s.find("extracted_count"); it != s.end()) line += std::to_string(std::llround(it->second.mean));
  else line += "n/a";
  line += " / " + mean_pm_std(s.at("final_accuracy"), true);
  return line;
}

std::string threshold_table(std::span<const ThresholdRow> rows) {
  std::map<double, std::vector<const ThresholdRow*>> by_tau;
  for (const auto& r : rows) by_tau[r.tau].push_back(&r);
  std::string out = "tau     pseudo-label acc / extracted\n";
  for (const auto& [tau, rs] : by_tau) {
    double acc = 0.0;
    std::size_t acc_n = 0;
    double count = 0.0;
    for (const auto* r : rs) {
      if (r->pseudo_label_accuracy) {
        acc += *r->pseudo_label_accuracy;
        ++acc_n;
      }
      count += static_cast<double>(r->extracted_count);
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-7.3g ", tau);
    out += buf;
    out += acc_n ? pct(acc / static_cast<double>(acc_n)) + "%" : std::string("n/a");
    out += " / " + std::to_string(std::llround(count / static_cast<double>(rs.size()))) + "\n";
  }
  return out;
}

std::string ensemble_table(std::span<const metrics::RunReport> reports) {
  std::string out = "pseudo-label acc / extracted / final accuracy\n";
  for (const char* variant : {"w/o ensemble", "w/ ensemble"}) {
    std::vector<metrics::RunReport> arm;
    for (const auto& r : reports) {
      if (r.variant == variant) arm.push_back(r);
    }
    if (!arm.empty()) out += summary_line(variant, arm) + "\n";
  }
  return out;
}

std::string summary_table(std::span<const metrics::RunReport> reports) {
  std::map<std::string, std::vector<metrics::RunReport>> groups;
  for (const auto& r : reports) groups[r.variant.empty() ? r.method : r.method + " (" + r.variant + ")"].push_back(r);
  std::string out = "method: pseudo-label acc / extracted / final accuracy (mean ± std)\n";
  for (const auto& [label, rs] : groups) {
    out += summary_line(label, rs) + "  [" + std::to_string(rs.size()) + " run" + (rs.size() == 1 ? "" : "s") + "]\n";
  }
  return out;
}

}  // namespace fedbeat::experiment
