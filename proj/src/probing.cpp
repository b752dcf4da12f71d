#include "alprobe/probing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "alprobe/stats.hpp"

namespace alprobe {

std::uint64_t stable_hash(std::string_view s) {
  // FNV-1a, 64 bit
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

int fold_of(const std::string& unit_id, int n_folds) {
  const auto hash_pos = unit_id.find('#');
  const std::string_view prompt_part =
      hash_pos == std::string::npos
          ? std::string_view(unit_id)
          : std::string_view(unit_id).substr(0, hash_pos);
  return static_cast<int>(stable_hash(prompt_part) %
                          static_cast<std::uint64_t>(n_folds));
}

ProbeDataset dataset_rows(const ProbeDataset& ds,
                          const std::vector<Eigen::Index>& rows) {
  ProbeDataset out;
  out.scenario = ds.scenario;
  out.attribute = ds.attribute;
  out.layer = ds.layer;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()));
  out.unit_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(rows[i]);
    out.targets[static_cast<Eigen::Index>(i)] = ds.targets[rows[i]];
    out.unit_ids.push_back(ds.unit_ids[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

namespace {

// Row order by (hash, id); used for dev splits and the MDL stream so both
// are reproducible without extra shuffling state.
std::vector<Eigen::Index> hash_order(const ProbeDataset& ds) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.targets.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto ha = stable_hash(ds.unit_ids[static_cast<std::size_t>(a)]);
    const auto hb = stable_hash(ds.unit_ids[static_cast<std::size_t>(b)]);
    if (ha != hb) return ha < hb;
    return ds.unit_ids[static_cast<std::size_t>(a)] <
           ds.unit_ids[static_cast<std::size_t>(b)];
  });
  return order;
}

std::optional<double> pearson_vec(const Eigen::VectorXd& a,
                                  const Eigen::VectorXd& b) {
  std::vector<double> x(a.data(), a.data() + a.size());
  std::vector<double> y(b.data(), b.data() + b.size());
  if (x.size() < 3) return std::nullopt;
  return pearson(x, y);
}

struct AdamWState {
  Eigen::VectorXd m, v;
  double mb = 0.0, vb = 0.0;  // bias moments
  long step = 0;

  explicit AdamWState(Eigen::Index dim)
      : m(Eigen::VectorXd::Zero(dim)), v(Eigen::VectorXd::Zero(dim)) {}

  void update(Eigen::VectorXd& w, double& b, const Eigen::VectorXd& gw,
              double gb, double lr, const TrainConfig& cfg) {
    ++step;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * gw;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * gw.cwiseProduct(gw);
    mb = cfg.beta1 * mb + (1.0 - cfg.beta1) * gb;
    vb = cfg.beta2 * vb + (1.0 - cfg.beta2) * gb * gb;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    w.array() -= lr * ((m.array() / bc1) /
                           ((v.array() / bc2).sqrt() + cfg.epsilon) +
                       cfg.weight_decay * w.array());
    b -= lr * (mb / bc1) / (std::sqrt(vb / bc2) + cfg.epsilon);
  }
};

}  // namespace

Probe train_probe(const ProbeDataset& train_split, const TrainConfig& cfg,
                  std::uint64_t seed) {
  const Eigen::Index n = train_split.targets.size();
  const Eigen::Index dim = train_split.features.cols();
  if (n < 2 * cfg.batch_size) {
    throw std::invalid_argument("train_probe: need >= 2 * batch_size rows");
  }
  // Reject datasets without any feature variance.
  const Eigen::RowVectorXd col_mean = train_split.features.colwise().mean();
  const double total_var =
      (train_split.features.rowwise() - col_mean).squaredNorm();
  if (total_var == 0.0) {
    throw std::invalid_argument("train_probe: zero feature variance");
  }

  const auto order = hash_order(train_split);
  const auto n_dev = std::max<std::size_t>(
      1, static_cast<std::size_t>(static_cast<double>(n) * cfg.dev_fraction));
  std::vector<Eigen::Index> train_rows(order.begin(),
                                       order.end() - static_cast<std::ptrdiff_t>(n_dev));
  std::vector<Eigen::Index> dev_rows(order.end() - static_cast<std::ptrdiff_t>(n_dev),
                                     order.end());
  const ProbeDataset dev = dataset_rows(train_split, dev_rows);

  const Eigen::Index n_train = static_cast<Eigen::Index>(train_rows.size());
  const long batches_per_epoch =
      (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = batches_per_epoch * cfg.epochs;
  const long warmup_steps = std::max<long>(
      1, static_cast<long>(std::ceil(cfg.warmup_fraction *
                                     static_cast<double>(total_steps))));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Probe probe;
  probe.weights = Eigen::VectorXd::Zero(dim);
  probe.bias = 0.0;
  AdamWState opt(dim);

  Probe best = probe;
  double best_dev = -2.0;
  long step = 0;

  std::vector<Eigen::Index> idx = train_rows;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size,
                                                      n_train - start);
      Eigen::MatrixXd x(bsz, dim);
      Eigen::VectorXd t(bsz);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        x.row(i) = train_split.features.row(idx[static_cast<std::size_t>(start + i)]);
        t[i] = train_split.targets[idx[static_cast<std::size_t>(start + i)]];
      }
      if (cfg.dropout > 0.0) {
        const double keep_scale = 1.0 / (1.0 - cfg.dropout);
        for (Eigen::Index i = 0; i < bsz; ++i) {
          for (Eigen::Index j = 0; j < dim; ++j) {
            x(i, j) = uni(rng) < cfg.dropout ? 0.0 : x(i, j) * keep_scale;
          }
        }
      }

      const Eigen::VectorXd err = probe.predict(x) - t;
      const double inv_b = 1.0 / static_cast<double>(bsz);
      const Eigen::VectorXd gw = 2.0 * inv_b * (x.transpose() * err);
      const double gb = 2.0 * inv_b * err.sum();

      ++step;
      const double lr =
          cfg.learning_rate *
          std::min(1.0, static_cast<double>(step) /
                            static_cast<double>(warmup_steps));
      opt.update(probe.weights, probe.bias, gw, gb, lr, cfg);
    }

    const auto dev_s = evaluate_probe(probe, dev);
    const double score = dev_s.value_or(-2.0);
    if (score > best_dev) {
      best_dev = score;
      best = probe;
    }
  }
  return best;
}

std::optional<double> evaluate_probe(const Probe& probe,
                                     const ProbeDataset& heldout) {
  if (heldout.targets.size() < 3) {
    throw std::invalid_argument("evaluate_probe: need >= 3 rows");
  }
  return pearson_vec(probe.predict(heldout.features), heldout.targets);
}

namespace {

std::uint64_t run_seed(std::uint64_t seed, int fold) {
  // distinct RNG stream per (seed, fold) pair
  std::uint64_t z = seed * 1000003ULL + static_cast<std::uint64_t>(fold) + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

InformationStrength information_strength(const ProbeDataset& dataset,
                                         const FoldPlan& plan,
                                         const TrainConfig& cfg) {
  std::vector<std::vector<Eigen::Index>> folds(
      static_cast<std::size_t>(plan.n_folds));
  for (Eigen::Index i = 0; i < dataset.targets.size(); ++i) {
    folds[static_cast<std::size_t>(
            fold_of(dataset.unit_ids[static_cast<std::size_t>(i)],
                    plan.n_folds))]
        .push_back(i);
  }

  InformationStrength out;
  for (std::uint64_t seed : plan.seeds) {
    for (int f = 0; f < plan.n_folds; ++f) {
      std::vector<Eigen::Index> train_rows;
      for (int g = 0; g < plan.n_folds; ++g) {
        if (g == f) continue;
        train_rows.insert(train_rows.end(), folds[static_cast<std::size_t>(g)].begin(),
                          folds[static_cast<std::size_t>(g)].end());
      }
      const ProbeDataset train = dataset_rows(dataset, train_rows);
      const ProbeDataset test =
          dataset_rows(dataset, folds[static_cast<std::size_t>(f)]);
      const Probe probe = train_probe(train, cfg, run_seed(seed, f));
      out.runs.push_back(evaluate_probe(probe, test).value_or(0.0));
    }
  }
  out.mean_s = mean(out.runs);
  out.std_s = stddev(out.runs);
  return out;
}

RegionMaxima region_maxima(const std::vector<double>& mean_s) {
  if (mean_s.empty()) throw std::invalid_argument("region_maxima: empty profile");
  const double last = static_cast<double>(mean_s.size() - 1);
  RegionMaxima m;
  bool lo = false, mi = false, up = false;
  for (std::size_t l = 0; l < mean_s.size(); ++l) {
    const double pos = static_cast<double>(l);
    if (pos < last / 3.0) {
      m.lower = lo ? std::max(m.lower, mean_s[l]) : mean_s[l];
      lo = true;
    } else if (pos < 2.0 * last / 3.0) {
      m.middle = mi ? std::max(m.middle, mean_s[l]) : mean_s[l];
      mi = true;
    } else {
      m.upper = up ? std::max(m.upper, mean_s[l]) : mean_s[l];
      up = true;
    }
  }
  return m;
}

InformationProfile layer_profile(const std::vector<ActivationRecord>& records,
                                 const Corpus& corpus,
                                 const GenerationScores& generation_scores,
                                 Scenario scenario, AttributeId attribute,
                                 const FoldPlan& plan, const TrainConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("layer_profile: no records");
  const int n_layers = static_cast<int>(records.front().layers.size());

  InformationProfile profile;
  profile.scenario = scenario;
  profile.attribute = attribute;
  for (int layer = 0; layer < n_layers; ++layer) {
    const auto ds = assemble_probe_dataset(records, corpus, generation_scores,
                                           scenario, attribute, layer);
    const auto s = information_strength(ds, plan, cfg);
    profile.mean_s.push_back(s.mean_s);
    profile.std_s.push_back(s.std_s);
  }
  profile.maxima = region_maxima(profile.mean_s);
  return profile;
}

SelectivityResult selectivity(const ProbeDataset& dataset, const FoldPlan& plan,
                              const TrainConfig& cfg,
                              const std::vector<Eigen::Index>* forced_permutation) {
  SelectivityResult out;

  const Eigen::Index n = dataset.targets.size();
  if ((dataset.targets.array() == dataset.targets[0]).all()) {
    return out;  // constant targets: both arms undefined
  }

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  if (forced_permutation) {
    perm = *forced_permutation;
  } else {
    // seed the control shuffle from the dataset identity itself
    std::uint64_t s = stable_hash(scenario_name(dataset.scenario));
    s = s * 31 + static_cast<std::uint64_t>(dataset.layer);
    s = s * 31 + static_cast<std::uint64_t>(dataset.attribute);
    std::mt19937_64 rng(s);
    std::shuffle(perm.begin(), perm.end(), rng);
  }

  ProbeDataset shuffled = dataset;
  for (Eigen::Index i = 0; i < n; ++i) {
    shuffled.targets[i] = dataset.targets[perm[static_cast<std::size_t>(i)]];
  }

  const auto true_arm = information_strength(dataset, plan, cfg);
  const auto control_arm = information_strength(shuffled, plan, cfg);
  out.s_true = true_arm.mean_s;
  out.s_shuffled = control_arm.mean_s;
  out.selectivity = true_arm.mean_s - control_arm.mean_s;
  return out;
}

// ---------------------------------------------------------------------------
// MDL

namespace {

constexpr int kMdlBins = 10;

int bin_of(double t) {
  return std::min(kMdlBins - 1,
                  static_cast<int>(t * static_cast<double>(kMdlBins)));
}

struct SoftmaxProbe {
  Eigen::MatrixXd weights;  // bins x dim
  Eigen::VectorXd bias;

  Eigen::VectorXd log_probs(const Eigen::VectorXd& x) const {
    Eigen::VectorXd logits = weights * x + bias;
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
  }
};

// Same protocol as train_probe with cross-entropy; tolerant of tiny
// prefixes (no dev selection below 20 rows, partial batches allowed).
// Features are standardized with statistics from the training prefix only;
// the scaler is folded back into the returned weights so callers evaluate
// on raw features.
SoftmaxProbe train_softmax(const Eigen::MatrixXd& raw_features,
                           const std::vector<int>& bins, const TrainConfig& cfg,
                           std::uint64_t seed) {
  const Eigen::Index n = raw_features.rows();
  const Eigen::Index dim = raw_features.cols();

  const Eigen::RowVectorXd mu = raw_features.colwise().mean();
  Eigen::RowVectorXd sd =
      (raw_features.rowwise() - mu).array().square().colwise().mean().sqrt();
  for (Eigen::Index j = 0; j < dim; ++j) sd[j] = std::max(sd[j], 1e-12);
  const Eigen::MatrixXd features =
      (raw_features.rowwise() - mu).array().rowwise() / sd.array();
  SoftmaxProbe probe;
  probe.weights = Eigen::MatrixXd::Zero(kMdlBins, dim);
  probe.bias = Eigen::VectorXd::Zero(kMdlBins);

  const bool use_dev = n >= 20;
  const Eigen::Index n_dev =
      use_dev ? std::max<Eigen::Index>(
                    1, static_cast<Eigen::Index>(static_cast<double>(n) *
                                                 cfg.dev_fraction))
              : 0;
  const Eigen::Index n_train = n - n_dev;

  const long batches_per_epoch =
      (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = batches_per_epoch * cfg.epochs;
  const long warmup_steps = std::max<long>(
      1, static_cast<long>(std::ceil(cfg.warmup_fraction *
                                     static_cast<double>(total_steps))));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_train));
  std::iota(idx.begin(), idx.end(), 0);

  // flat AdamW state over weights and bias
  Eigen::MatrixXd m_w = Eigen::MatrixXd::Zero(kMdlBins, dim);
  Eigen::MatrixXd v_w = Eigen::MatrixXd::Zero(kMdlBins, dim);
  Eigen::VectorXd m_b = Eigen::VectorXd::Zero(kMdlBins);
  Eigen::VectorXd v_b = Eigen::VectorXd::Zero(kMdlBins);
  long step = 0;

  SoftmaxProbe best = probe;
  double best_dev = std::numeric_limits<double>::infinity();

  auto dev_loss = [&](const SoftmaxProbe& p) {
    double loss = 0.0;
    for (Eigen::Index i = n_train; i < n; ++i) {
      loss -= p.log_probs(features.row(i).transpose())[bins[static_cast<std::size_t>(i)]];
    }
    return loss / static_cast<double>(std::max<Eigen::Index>(1, n_dev));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index bsz =
          std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(kMdlBins, dim);
      Eigen::VectorXd gb = Eigen::VectorXd::Zero(kMdlBins);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        const Eigen::Index row = idx[static_cast<std::size_t>(start + i)];
        Eigen::VectorXd x = features.row(row).transpose();
        if (cfg.dropout > 0.0) {
          const double keep_scale = 1.0 / (1.0 - cfg.dropout);
          for (Eigen::Index j = 0; j < dim; ++j) {
            x[j] = uni(rng) < cfg.dropout ? 0.0 : x[j] * keep_scale;
          }
        }
        Eigen::VectorXd p = probe.log_probs(x).array().exp();
        p[bins[static_cast<std::size_t>(row)]] -= 1.0;
        gw.noalias() += p * x.transpose();
        gb += p;
      }
      gw /= static_cast<double>(bsz);
      gb /= static_cast<double>(bsz);

      ++step;
      const double lr =
          cfg.learning_rate *
          std::min(1.0, static_cast<double>(step) /
                            static_cast<double>(warmup_steps));
      m_w = cfg.beta1 * m_w + (1.0 - cfg.beta1) * gw;
      v_w = cfg.beta2 * v_w + (1.0 - cfg.beta2) * gw.cwiseProduct(gw);
      m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * gb;
      v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * gb.cwiseProduct(gb);
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      probe.weights.array() -=
          lr * ((m_w.array() / bc1) / ((v_w.array() / bc2).sqrt() + cfg.epsilon) +
                cfg.weight_decay * probe.weights.array());
      probe.bias.array() -=
          lr * (m_b.array() / bc1) / ((v_b.array() / bc2).sqrt() + cfg.epsilon);
    }
    if (use_dev) {
      const double loss = dev_loss(probe);
      if (loss < best_dev) {
        best_dev = loss;
        best = probe;
      }
    }
  }
  SoftmaxProbe out = use_dev ? best : probe;
  // fold the scaler in: logits(raw) = W ((raw - mu) / sd) + b
  out.bias -= out.weights * (mu.array() / sd.array()).matrix().transpose();
  out.weights.array().rowwise() /= sd.array();
  return out;
}

}  // namespace

MdlResult mdl_compression(const ProbeDataset& dataset, const TrainConfig& cfg,
                          const std::vector<double>& fractions) {
  const Eigen::Index n = dataset.targets.size();
  if (n < 100) throw std::invalid_argument("mdl_compression: need N >= 100");

  const auto order = hash_order(dataset);
  Eigen::MatrixXd features(n, dataset.features.cols());
  std::vector<int> bins(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    features.row(i) = dataset.features.row(order[static_cast<std::size_t>(i)]);
    bins[static_cast<std::size_t>(i)] =
        bin_of(dataset.targets[order[static_cast<std::size_t>(i)]]);
  }

  std::vector<Eigen::Index> bounds;
  for (double f : fractions) {
    const auto b = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(std::llround(f * static_cast<double>(n))), 1, n);
    if (bounds.empty() || b > bounds.back()) bounds.push_back(b);
  }
  if (bounds.back() != n) bounds.push_back(n);

  const double log2_bins = std::log2(static_cast<double>(kMdlBins));
  MdlResult result;
  result.fractions = fractions;
  result.uniform_bits = static_cast<double>(n) * log2_bins;
  result.online_bits = static_cast<double>(bounds.front()) * log2_bins;

  for (std::size_t k = 1; k < bounds.size(); ++k) {
    const Eigen::Index train_end = bounds[k - 1];
    const Eigen::Index block_end = bounds[k];
    const SoftmaxProbe probe = train_softmax(
        features.topRows(train_end), bins, cfg,
        stable_hash("mdl") + static_cast<std::uint64_t>(k));
    for (Eigen::Index i = train_end; i < block_end; ++i) {
      const double lp =
          probe.log_probs(features.row(i).transpose())[bins[static_cast<std::size_t>(i)]];
      const double p = std::max(std::exp(lp), 1e-10);
      result.online_bits -= std::log2(p);
    }
  }
  result.compression = result.uniform_bits / result.online_bits;
  return result;
}

}  // namespace alprobe
