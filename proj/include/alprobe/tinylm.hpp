#ifndef ALPROBE_TINYLM_HPP
#define ALPROBE_TINYLM_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "alprobe/activations.hpp"
#include "alprobe/attributes.hpp"

namespace alprobe {

struct TinyLMConfig {
  int vocab_size = 256;
  int d_model = 64;
  int n_layers = 12;
  int n_heads = 4;
  int max_seq_len = 128;
  double toxicity_gain = 2.0;       // beta: planted embedding component
  int suppressor_layer = 5;         // l*, 1-based block index
  double suppressor_strength = 0.8; // gamma in [0,1]
  std::uint64_t seed = 0;
  // Token ids whose embeddings carry the planted direction per attribute.
  std::array<std::vector<int>, kNumAttributes> attribute_token_ids;
};

struct GenerationConfig {
  double temperature = 1.0;
  double top_p = 0.9;
  int n_samples = 25;
  int max_new_tokens = 20;
  std::uint64_t seed = 0;
};

struct InterventionSpec {
  std::set<int> skip_layers;  // 1-based block indices; empty = baseline
};

struct ForwardResult {
  Eigen::MatrixXf logits;                 // T x vocab
  std::vector<Eigen::MatrixXf> hidden;    // n_layers+1 entries, each T x d
};

// Per-prompt generation output with per-layer pooled states captured from
// the pass that produced the tokens.
struct SampledGeneration {
  std::vector<int> tokens;
  std::vector<Eigen::VectorXf> h_output;  // n_layers+1 vectors; empty if no tokens
};

struct PromptGenerations {
  std::vector<Eigen::VectorXf> h_input;   // n_layers+1 vectors
  std::vector<SampledGeneration> samples;
};

struct ExtractedActivations {
  ActivationRecord input;                   // generation_index -1
  std::optional<ActivationRecord> output;   // absent when generation empty
};

// Forward-only decoder-only transformer with pseudo-random weights
// regenerated from the seed. Pre-norm residual blocks, sinusoidal
// positions, no biases, output head tied to the embeddings. The
// suppressor block additionally removes a gamma fraction of the residual
// stream's component along each planted toxicity direction.
class TinyLM {
 public:
  explicit TinyLM(const TinyLMConfig& config);

  const TinyLMConfig& config() const { return config_; }
  const Eigen::MatrixXf& embeddings() const { return embed_; }
  // Orthonormal columns, one per attribute.
  const Eigen::MatrixXf& toxicity_directions() const { return directions_; }

  ForwardResult forward(const std::vector<int>& tokens,
                        const InterventionSpec& intervention = {}) const;

  std::vector<std::vector<int>> generate(
      const std::vector<int>& prompt_tokens, const GenerationConfig& gen_cfg,
      const InterventionSpec& intervention = {}) const;

  // Same sampling as generate(), additionally pooling the residual stream
  // of the producing pass over prompt and generated positions.
  PromptGenerations generate_with_states(
      const std::vector<int>& prompt_tokens, const GenerationConfig& gen_cfg,
      const InterventionSpec& intervention = {}) const;

  ExtractedActivations extract_activations(
      const std::vector<int>& prompt_tokens,
      const std::vector<int>& generated_tokens, int generation_index,
      const InterventionSpec& intervention = {}) const;

 private:
  struct Block {
    Eigen::MatrixXf w_query, w_key, w_value, w_out;  // d x d
    Eigen::MatrixXf w_ff_in;   // d x 4d
    Eigen::MatrixXf w_ff_out;  // 4d x d
  };

  Eigen::MatrixXf embed_rows(const std::vector<int>& tokens,
                             int position_offset) const;
  // Applies one block to the full sequence (prefill / full forward).
  Eigen::MatrixXf apply_block(int layer, const Eigen::MatrixXf& x) const;
  void apply_suppressor(Eigen::MatrixXf& x) const;

  TinyLMConfig config_;
  Eigen::MatrixXf embed_;       // vocab x d
  Eigen::MatrixXf positions_;   // max_seq_len x d
  Eigen::MatrixXf directions_;  // d x 6
  std::vector<Block> blocks_;

  friend struct DecodeState;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Nucleus rule: smallest probability-sorted prefix with cumulative mass
// >= top_p (ties by token id), renormalized before drawing.
int sample_nucleus(const Eigen::RowVectorXf& logits, double temperature,
                   double top_p, std::mt19937_64& rng);

TinyLM build_synthetic_lm(const TinyLMConfig& config);

}  // namespace alprobe

#endif  // ALPROBE_TINYLM_HPP
