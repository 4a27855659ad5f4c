// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sorbet/fixed_tensor.hpp"
#include "sorbet/kernels.hpp"
#include "sorbet/op_counter.hpp"
#include "sorbet/quantize.hpp"

namespace sorbet {

/// Pipeline stages. m0 is the real-valued reference encoder. m1 swaps in
/// binary weights and integer activations but keeps the reference softmax
/// and layernorm; m2 swaps the softmax for the shift-based one; m3 swaps the
/// norm for the shift-based one (the forward is now entirely fixed-point);
/// snn replaces every matmul with rate-coded spike accumulation and must be
/// bit-exact against m3.
enum class Stage { m0, m1, m2, m3, snn };

std::string stage_name(Stage s);

struct ModelConfig {
  std::size_t blocks = 2;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 128;
  std::size_t seq_len = 8;
  std::size_t vocab = 64;
  std::size_t classes = 4;
  std::size_t timesteps = 16;  // power of two
  int act_bits = 4;
  int frac_bits = kDefaultFracBits;  // resting activation grid
  double clamp_max = 0.001;          // score clamp before the ceil
  Pow2Round k_mode = Pow2Round::round_nearest;
  bool pow2_norm = true;
  GroupLayout norm_layout = GroupLayout::head_groups;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
};

/// Real-valued dense layer, row-major [rows x cols]; bias empty or cols.
struct DenseLinear {
  std::size_t rows = 0, cols = 0;
  std::vector<double> w;
  std::vector<double> bias;
};

struct AffineNorm {
  std::vector<double> gamma, beta;
};

struct ReferenceBlock {
  DenseLinear wq, wk, wv, wo, ffn_in, ffn_out;
  AffineNorm attn_norm, ffn_norm;
};

/// The full-precision reference encoder (stage m0), randomly initialized
/// from the config seed.
struct ReferenceModel {
  ModelConfig cfg;
  std::vector<double> embedding;  // [vocab x dim]
  std::vector<ReferenceBlock> blocks;
  DenseLinear head;  // [dim x classes], with bias
};

ReferenceModel build_reference(const ModelConfig& cfg);

/// Activation quantization sites around one encoder block. The probability
/// site needs no parameters: attention probabilities land on the 1/T grid
/// fixed by the timestep count.
struct BlockSites {
  ElasticParams input;    // block input, shared by the Q/K/V projections
  ElasticParams queries;  // before the score matmul
  ElasticParams attn_out; // before the output projection
  ElasticParams ffn_in;   // before the first feed-forward matmul
  ElasticParams ffn_act;  // after the activation, before the second matmul
};

struct QuantBlock {
  BinaryLinear wq, wk, wv, wo, ffn_in, ffn_out;
  AffineNorm attn_norm, ffn_norm;  // stages m1/m2
  BspnState attn_bspn, ffn_bspn;   // stages m3/snn
  BlockSites sites;
};

struct StageModel {
  Stage stage = Stage::m0;
  ModelConfig cfg;
  std::shared_ptr<const ReferenceModel> reference;  // m0 path
  FixedTensor embedding;  // [vocab x dim] on the activation grid
  std::vector<QuantBlock> blocks;
  BinaryLinear head;
  ElasticParams head_site;
};

struct ForwardResult {
  std::vector<double> logits;                      // [classes]
  std::vector<std::vector<double>> block_outputs;  // [blocks][seq*dim]
  // Spiking stage only: spike rate of the train encoding each block's
  // output, every encoder-site train rate in pass order, and the
  // spike-weighted average over all trains of the pass.
  std::vector<double> block_output_rates;
  std::vector<double> site_rates;
  double avg_spike_rate = 0.0;
  OpCounter ops;  // everything the forward pass did
};

ForwardResult forward(const StageModel& model, std::span<const int> token_ids);

StageModel stage_m0(std::shared_ptr<const ReferenceModel> ref);
/// Binarizes weights, folds the attention scale into the query projection,
/// and calibrates the activation quantizers on a reference-model battery.
StageModel quantize_to_m1(std::shared_ptr<const ReferenceModel> ref);
StageModel to_m2(const StageModel& m1);
/// Calibrates the shift-norm statistics on an m2 battery, then freezes them.
StageModel to_m3(const StageModel& m2);
StageModel to_snn(const StageModel& m3);

/// One encoder block at a given stage; standalone entry point for tests.
/// x is [seq x dim] on the activation grid.
FixedTensor sorbet_block(const QuantBlock& blk, const ModelConfig& cfg,
                         Stage stage, const FixedTensor& x);

struct StageDeviation {
  std::string from, to;
  double max_abs = 0.0;
  double mean_abs = 0.0;
};

struct PipelineResult {
  std::vector<StageModel> stages;  // m0, m1, m2, m3, snn
  std::vector<StageDeviation> deviations;
  bool snn_matches_m3 = false;  // bit-exact logits and block outputs
  OpCounter snn_ops;            // one spiking battery forward
  OpCounter m3_ops;             // the matching fixed-point forward
  double snn_avg_spike_rate = 0.0;
  std::size_t battery = 0;
};

/// Runs the whole transformation chain and measures adjacent-stage output
/// deviation over a battery of random token sequences.
PipelineResult transform_pipeline(std::shared_ptr<const ReferenceModel> ref,
                                  std::size_t battery, std::uint64_t seed);

struct SpikeReport {
  std::vector<double> block_rates;  // [blocks], battery average
  double average_rate = 0.0;        // all encoder sites, battery average
  std::size_t battery = 0;
};

SpikeReport measure_block_spike_rates(const StageModel& snn,
                                      std::size_t battery, std::uint64_t seed);

std::vector<int> random_token_ids(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace sorbet
