#include "alprobe/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace alprobe {

namespace {

// Initialization scales. The residual stream stays dominated by the
// embeddings so the planted structure (toxicity directions, suppressor)
// controls both probe signal and sampling behavior.
constexpr float kPosScale = 0.2f;
constexpr float kQueryKeyScale = 0.1f;   // near-uniform causal attention
constexpr float kAttnOutScale = 0.05f;   // w_out = scale * w_value^T
constexpr float kFfOutScale = 0.02f;
constexpr float kHeadScale = 0.35f;      // logit temperature of the tied head
constexpr float kLnEps = 1e-5f;

Eigen::MatrixXf layer_norm(const Eigen::MatrixXf& x) {
  Eigen::MatrixXf out(x.rows(), x.cols());
  const float d = static_cast<float>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const float m = x.row(i).mean();
    const float var = (x.row(i).array() - m).square().sum() / d;
    out.row(i) = (x.row(i).array() - m) / std::sqrt(var + kLnEps);
  }
  return out;
}

Eigen::RowVectorXf layer_norm_row(const Eigen::RowVectorXf& x) {
  const float d = static_cast<float>(x.size());
  const float m = x.mean();
  const float var = (x.array() - m).square().sum() / d;
  return (x.array() - m) / std::sqrt(var + kLnEps);
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x / std::sqrt(2.0f)));
}

Eigen::MatrixXf gaussian(std::mt19937_64& rng, Eigen::Index rows,
                         Eigen::Index cols, float scale) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng) * scale;
  }
  return m;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the combined words
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TinyLM::TinyLM(const TinyLMConfig& config) : config_(config) {
  if (config.d_model <= 0 || config.n_heads <= 0 ||
      config.d_model % config.n_heads != 0) {
    throw std::invalid_argument("tinylm: d_model must be divisible by n_heads");
  }
  if (config.n_layers <= 0 || config.suppressor_layer < 1 ||
      config.suppressor_layer > config.n_layers) {
    throw std::invalid_argument("tinylm: suppressor layer outside 1..n_layers");
  }
  if (config.suppressor_strength < 0.0 || config.suppressor_strength > 1.0) {
    throw std::invalid_argument("tinylm: suppressor strength outside [0,1]");
  }
  if (config.vocab_size <= 0 || config.max_seq_len <= 0) {
    throw std::invalid_argument("tinylm: vocab_size and max_seq_len positive");
  }
  for (const auto& ids : config.attribute_token_ids) {
    for (int id : ids) {
      if (id < 0 || id >= config.vocab_size) {
        throw std::invalid_argument("tinylm: planted token id outside vocab");
      }
    }
  }

  const int d = config.d_model;
  std::mt19937_64 rng(config.seed);

  // Orthonormal toxicity directions via QR of a Gaussian draw.
  Eigen::MatrixXf raw = gaussian(rng, d, static_cast<Eigen::Index>(kNumAttributes), 1.0f);
  Eigen::HouseholderQR<Eigen::MatrixXf> qr(raw);
  Eigen::MatrixXf q = qr.householderQ() * Eigen::MatrixXf::Identity(
                                              d, static_cast<Eigen::Index>(kNumAttributes));
  directions_ = q;

  // Unit-norm embedding rows plus the planted component for lexicon tokens.
  embed_ = gaussian(rng, config.vocab_size, d, 1.0f);
  for (Eigen::Index i = 0; i < embed_.rows(); ++i) {
    embed_.row(i).normalize();
  }
  // Planted rows first lose any accidental overlap with the toxicity
  // subspace, so their projection equals the configured gain exactly.
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    for (int id : config.attribute_token_ids[a]) {
      embed_.row(id) -= (embed_.row(id) * directions_) * directions_.transpose();
      embed_.row(id).normalize();
      embed_.row(id) += static_cast<float>(config.toxicity_gain) *
                        directions_.col(static_cast<Eigen::Index>(a)).transpose();
    }
  }

  // Sinusoidal positions, downscaled so pooled means stay embedding-dominated.
  positions_.resize(config.max_seq_len, d);
  for (int pos = 0; pos < config.max_seq_len; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      positions_(pos, i) = kPosScale * static_cast<float>(
                                           i % 2 == 0 ? std::sin(angle)
                                                      : std::cos(angle));
    }
  }

  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  blocks_.resize(config.n_layers);
  for (auto& b : blocks_) {
    b.w_query = gaussian(rng, d, d, kQueryKeyScale * inv_sqrt_d);
    b.w_key = gaussian(rng, d, d, kQueryKeyScale * inv_sqrt_d);
    b.w_value = gaussian(rng, d, d, inv_sqrt_d);
    // Transposed value projection: the value path approximates a scaled
    // identity, so attention forwards the planted components of earlier
    // positions instead of scattering them.
    b.w_out = kAttnOutScale * b.w_value.transpose();
    b.w_ff_in = gaussian(rng, d, 4 * d, inv_sqrt_d);
    b.w_ff_out = gaussian(rng, 4 * d, d,
                          kFfOutScale / std::sqrt(4.0f * static_cast<float>(d)));
  }
}

TinyLM build_synthetic_lm(const TinyLMConfig& config) { return TinyLM(config); }

Eigen::MatrixXf TinyLM::embed_rows(const std::vector<int>& tokens,
                                   int position_offset) const {
  Eigen::MatrixXf x(static_cast<Eigen::Index>(tokens.size()), config_.d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab_size) {
      throw std::invalid_argument("tinylm: token id outside vocab: " +
                                  std::to_string(tokens[i]));
    }
    x.row(static_cast<Eigen::Index>(i)) =
        embed_.row(tokens[i]) +
        positions_.row(position_offset + static_cast<int>(i));
  }
  return x;
}

void TinyLM::apply_suppressor(Eigen::MatrixXf& x) const {
  const float gamma = static_cast<float>(config_.suppressor_strength);
  // x <- x - gamma * (x u) u^T for each planted direction
  x.noalias() -= gamma * (x * directions_) * directions_.transpose();
}

Eigen::MatrixXf TinyLM::apply_block(int layer, const Eigen::MatrixXf& x) const {
  const Block& b = blocks_[static_cast<std::size_t>(layer - 1)];
  const int dh = config_.d_model / config_.n_heads;
  const Eigen::Index t = x.rows();

  Eigen::MatrixXf xh = layer_norm(x);
  Eigen::MatrixXf q = xh * b.w_query;
  Eigen::MatrixXf k = xh * b.w_key;
  Eigen::MatrixXf v = xh * b.w_value;

  Eigen::MatrixXf concat(t, config_.d_model);
  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int h = 0; h < config_.n_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    for (Eigen::Index i = 0; i < t; ++i) {
      Eigen::VectorXf scores =
          (kh.topRows(i + 1) * qh.row(i).transpose()) * inv_sqrt_dh;
      scores.array() -= scores.maxCoeff();
      Eigen::VectorXf w = scores.array().exp();
      w /= w.sum();
      concat.block(i, h * dh, 1, dh).noalias() = w.transpose() * vh.topRows(i + 1);
    }
  }

  Eigen::MatrixXf x1 = x + concat * b.w_out;
  Eigen::MatrixXf f = (layer_norm(x1) * b.w_ff_in).unaryExpr(&gelu) * b.w_ff_out;
  Eigen::MatrixXf x2 = x1 + f;
  if (layer == config_.suppressor_layer) apply_suppressor(x2);
  return x2;
}

ForwardResult TinyLM::forward(const std::vector<int>& tokens,
                              const InterventionSpec& intervention) const {
  if (tokens.empty()) throw std::invalid_argument("tinylm: empty token sequence");
  if (static_cast<int>(tokens.size()) > config_.max_seq_len) {
    throw std::invalid_argument("tinylm: sequence exceeds max_seq_len");
  }
  for (int l : intervention.skip_layers) {
    if (l < 1 || l > config_.n_layers) {
      throw std::invalid_argument("tinylm: skip layer outside 1..n_layers");
    }
  }

  ForwardResult r;
  r.hidden.reserve(static_cast<std::size_t>(config_.n_layers) + 1);
  r.hidden.push_back(embed_rows(tokens, 0));
  for (int l = 1; l <= config_.n_layers; ++l) {
    if (intervention.skip_layers.count(l)) {
      r.hidden.push_back(r.hidden.back());
    } else {
      r.hidden.push_back(apply_block(l, r.hidden.back()));
    }
  }
  r.logits = kHeadScale * layer_norm(r.hidden.back()) * embed_.transpose();
  return r;
}

// ---------------------------------------------------------------------------
// Incremental decoding

namespace {

struct LayerCache {
  Eigen::MatrixXf k, v;  // capacity x d, `length` rows valid
};

}  // namespace

struct DecodeState {
  const TinyLM* lm = nullptr;
  InterventionSpec intervention;
  std::vector<LayerCache> caches;  // one per block
  int length = 0;

  DecodeState(const TinyLM& model, const InterventionSpec& spec, int capacity)
      : lm(&model), intervention(spec) {
    caches.resize(static_cast<std::size_t>(model.config_.n_layers));
    for (auto& c : caches) {
      c.k.resize(capacity, model.config_.d_model);
      c.v.resize(capacity, model.config_.d_model);
    }
  }

  // Runs the whole prompt through the blocks, filling the caches and
  // returning per-layer hidden states (same math as TinyLM::forward).
  std::vector<Eigen::MatrixXf> prefill(const std::vector<int>& tokens) {
    std::vector<Eigen::MatrixXf> hidden;
    hidden.push_back(lm->embed_rows(tokens, 0));
    for (int l = 1; l <= lm->config_.n_layers; ++l) {
      if (intervention.skip_layers.count(l)) {
        hidden.push_back(hidden.back());
      } else {
        const auto& b = lm->blocks_[static_cast<std::size_t>(l - 1)];
        Eigen::MatrixXf xh = layer_norm(hidden.back());
        auto& c = caches[static_cast<std::size_t>(l - 1)];
        c.k.topRows(xh.rows()).noalias() = xh * b.w_key;
        c.v.topRows(xh.rows()).noalias() = xh * b.w_value;
        hidden.push_back(lm->apply_block(l, hidden.back()));
      }
    }
    length = static_cast<int>(tokens.size());
    return hidden;
  }

  // Processes one new token; returns the residual stream per layer for the
  // new position (n_layers+1 rows stacked) and its logits.
  std::pair<Eigen::MatrixXf, Eigen::RowVectorXf> step(int token) {
    const auto& cfg = lm->config_;
    const int dh = cfg.d_model / cfg.n_heads;
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    Eigen::MatrixXf per_layer(cfg.n_layers + 1, cfg.d_model);
    Eigen::RowVectorXf x =
        lm->embed_.row(token) + lm->positions_.row(length);
    per_layer.row(0) = x;

    for (int l = 1; l <= cfg.n_layers; ++l) {
      if (intervention.skip_layers.count(l)) {
        per_layer.row(l) = x;
        continue;
      }
      const auto& b = lm->blocks_[static_cast<std::size_t>(l - 1)];
      auto& c = caches[static_cast<std::size_t>(l - 1)];

      Eigen::RowVectorXf xh = layer_norm_row(x);
      c.k.row(length).noalias() = xh * b.w_key;
      c.v.row(length).noalias() = xh * b.w_value;
      Eigen::RowVectorXf q = xh * b.w_query;

      Eigen::RowVectorXf concat(cfg.d_model);
      const int t = length + 1;
      for (int h = 0; h < cfg.n_heads; ++h) {
        Eigen::VectorXf scores =
            (c.k.block(0, h * dh, t, dh) *
             q.segment(h * dh, dh).transpose()) * inv_sqrt_dh;
        scores.array() -= scores.maxCoeff();
        Eigen::VectorXf w = scores.array().exp();
        w /= w.sum();
        concat.segment(h * dh, dh).noalias() =
            w.transpose() * c.v.block(0, h * dh, t, dh);
      }

      Eigen::RowVectorXf x1 = x + concat * b.w_out;
      Eigen::RowVectorXf f =
          (layer_norm_row(x1) * b.w_ff_in).unaryExpr(&gelu) * b.w_ff_out;
      x = x1 + f;
      if (l == cfg.suppressor_layer) {
        const float gamma = static_cast<float>(cfg.suppressor_strength);
        x -= gamma * (x * lm->directions_) * lm->directions_.transpose();
      }
      per_layer.row(l) = x;
    }
    ++length;

    Eigen::RowVectorXf logits =
        kHeadScale * layer_norm_row(x) * lm->embed_.transpose();
    return {std::move(per_layer), std::move(logits)};
  }
};

int sample_nucleus(const Eigen::RowVectorXf& logits, double temperature,
                   double top_p, std::mt19937_64& rng) {
  const int n = static_cast<int>(logits.size());
  std::vector<double> probs(static_cast<std::size_t>(n));
  double max_logit = -1e30;
  for (int i = 0; i < n; ++i) {
    max_logit = std::max(max_logit, static_cast<double>(logits[i]));
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[static_cast<std::size_t>(i)] =
        std::exp((static_cast<double>(logits[i]) - max_logit) / temperature);
    sum += probs[static_cast<std::size_t>(i)];
  }
  for (auto& p : probs) p /= sum;

  // Probability-sorted prefix with cumulative mass >= top_p, ties by id.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double pa = probs[static_cast<std::size_t>(a)];
    const double pb = probs[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size() && cum < top_p) {
    cum += probs[static_cast<std::size_t>(order[keep])];
    ++keep;
  }
  keep = std::max<std::size_t>(keep, 1);

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double target = uni(rng) * cum;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (target <= acc) return order[i];
  }
  return order[keep - 1];
}

PromptGenerations TinyLM::generate_with_states(
    const std::vector<int>& prompt_tokens, const GenerationConfig& gen_cfg,
    const InterventionSpec& intervention) const {
  if (gen_cfg.top_p <= 0.0 || gen_cfg.top_p > 1.0 || gen_cfg.temperature <= 0.0 ||
      gen_cfg.n_samples < 1 || gen_cfg.max_new_tokens < 0) {
    throw std::invalid_argument("tinylm: invalid generation config");
  }
  if (prompt_tokens.empty()) {
    throw std::invalid_argument("tinylm: empty prompt");
  }
  if (static_cast<int>(prompt_tokens.size()) + gen_cfg.max_new_tokens >
      config_.max_seq_len) {
    throw std::invalid_argument("tinylm: prompt too long for max_new_tokens");
  }

  const int capacity =
      static_cast<int>(prompt_tokens.size()) + gen_cfg.max_new_tokens;
  DecodeState base(*this, intervention, capacity);
  const auto prompt_hidden = base.prefill(prompt_tokens);

  PromptGenerations out;
  out.h_input.reserve(prompt_hidden.size());
  for (const auto& h : prompt_hidden) {
    out.h_input.push_back(mean_pool(h, 0, h.rows()));
  }

  const int n_states = config_.n_layers + 1;
  out.samples.resize(static_cast<std::size_t>(gen_cfg.n_samples));
  for (int s = 0; s < gen_cfg.n_samples; ++s) {
    std::mt19937_64 rng(mix_seed(gen_cfg.seed, static_cast<std::uint64_t>(s)));
    DecodeState state = base;  // copies the prompt caches
    auto& sample = out.samples[static_cast<std::size_t>(s)];

    Eigen::MatrixXf sums = Eigen::MatrixXf::Zero(n_states, config_.d_model);
    Eigen::RowVectorXf logits =
        kHeadScale * layer_norm_row(prompt_hidden.back().row(
                         prompt_hidden.back().rows() - 1)) *
        embed_.transpose();
    for (int t = 0; t < gen_cfg.max_new_tokens; ++t) {
      const int token =
          sample_nucleus(logits, gen_cfg.temperature, gen_cfg.top_p, rng);
      sample.tokens.push_back(token);
      auto [per_layer, next_logits] = state.step(token);
      sums += per_layer;
      logits = std::move(next_logits);
    }
    if (!sample.tokens.empty()) {
      sums /= static_cast<float>(sample.tokens.size());
      sample.h_output.reserve(static_cast<std::size_t>(n_states));
      for (int l = 0; l < n_states; ++l) {
        sample.h_output.push_back(sums.row(l).transpose());
      }
    }
  }
  return out;
}

std::vector<std::vector<int>> TinyLM::generate(
    const std::vector<int>& prompt_tokens, const GenerationConfig& gen_cfg,
    const InterventionSpec& intervention) const {
  auto result = generate_with_states(prompt_tokens, gen_cfg, intervention);
  std::vector<std::vector<int>> out;
  out.reserve(result.samples.size());
  for (auto& s : result.samples) out.push_back(std::move(s.tokens));
  return out;
}

ExtractedActivations TinyLM::extract_activations(
    const std::vector<int>& prompt_tokens,
    const std::vector<int>& generated_tokens, int generation_index,
    const InterventionSpec& intervention) const {
  std::vector<int> all = prompt_tokens;
  all.insert(all.end(), generated_tokens.begin(), generated_tokens.end());
  const auto fwd = forward(all, intervention);

  ExtractedActivations out;
  out.input.prompt_id.clear();
  out.input.generation_index = -1;
  const auto p = static_cast<Eigen::Index>(prompt_tokens.size());
  for (const auto& h : fwd.hidden) {
    out.input.layers.push_back(mean_pool(h, 0, p));
  }
  if (!generated_tokens.empty()) {
    ActivationRecord rec;
    rec.generation_index = generation_index;
    for (const auto& h : fwd.hidden) {
      rec.layers.push_back(mean_pool(h, p, h.rows()));
    }
    out.output = std::move(rec);
  }
  return out;
}

}  // namespace alprobe
