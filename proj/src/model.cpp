// SPDX-License-Identifier: Apache-2.0
#include "sorbet/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "sorbet/detail/bits.hpp"
#include "sorbet/spiking.hpp"
#include "sorbet/verify.hpp"

namespace sorbet {
namespace {

// ---------------------------------------------------------------- utilities

FixedTensor rescale_to_frac(const FixedTensor& x, int frac, int width) {
  const int up = frac - x.frac_bits();  // left shift when positive
  FixedTensor out(x.shape(), frac, width);
  if (up != 0) ops::shift(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.set_mantissa(i, detail::scale_shift(x.mantissa(i), up));
  return out;
}

// value *= 2^e by moving the binary point; touches the mantissas only when
// the point would go below zero.
FixedTensor apply_exponent(const FixedTensor& x, int e) {
  const int nf = x.frac_bits() - e;
  if (nf >= 0) {
    std::vector<std::int64_t> m(x.mantissas().begin(), x.mantissas().end());
    return FixedTensor::from_mantissas(std::move(m), x.shape(), nf,
                                       x.mantissa_bits());
  }
  FixedTensor out(x.shape(), 0, x.mantissa_bits());
  ops::shift(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.set_mantissa(i, detail::scale_shift(x.mantissa(i), -nf));
  return out;
}

FixedTensor add_aligned(const FixedTensor& a, const FixedTensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("residual shape mismatch");
  const int f = std::max(a.frac_bits(), b.frac_bits());
  FixedTensor out(a.shape(), f, 64);
  if (a.frac_bits() != f) ops::shift(a.size());
  if (b.frac_bits() != f) ops::shift(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::int64_t ma = detail::scale_shift(a.mantissa(i),
                                                f - a.frac_bits());
    const std::int64_t mb = detail::scale_shift(b.mantissa(i),
                                                f - b.frac_bits());
    std::int64_t s;
    if (__builtin_add_overflow(ma, mb, &s))
      throw std::overflow_error("residual add overflow");
    out.set_mantissa(i, s);
  }
  ops::add(a.size());
  return out;
}

FixedTensor slice_head(const FixedTensor& x, std::size_t h, std::size_t dk) {
  const std::size_t seq = x.shape()[0], d = x.shape()[1];
  FixedTensor out({seq, dk}, x.frac_bits(), x.mantissa_bits());
  for (std::size_t s = 0; s < seq; ++s)
    for (std::size_t j = 0; j < dk; ++j)
      out.set_mantissa(s * dk + j, x.mantissa(s * d + h * dk + j));
  return out;
}

void write_head(FixedTensor& dst, const FixedTensor& src, std::size_t h,
                std::size_t dk) {
  const std::size_t seq = dst.shape()[0], d = dst.shape()[1];
  for (std::size_t s = 0; s < seq; ++s)
    for (std::size_t j = 0; j < dk; ++j)
      dst.set_mantissa(s * d + h * dk + j, src.mantissa(s * dk + j));
}

FixedTensor transpose2(const FixedTensor& x) {
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  FixedTensor out({c, r}, x.frac_bits(), x.mantissa_bits());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.set_mantissa(j * r + i, x.mantissa(i * c + j));
  return out;
}

FixedTensor row_slice(const FixedTensor& x, std::size_t r) {
  const std::size_t c = x.shape().back();
  FixedTensor out({c}, x.frac_bits(), x.mantissa_bits());
  for (std::size_t j = 0; j < c; ++j) out.set_mantissa(j, x.mantissa(r * c + j));
  return out;
}

double level_rate(const FixedTensor& levels, std::size_t timesteps) {
  if (levels.size() == 0) return 0.0;
  long double sum = 0.0L;
  for (std::size_t i = 0; i < levels.size(); ++i) sum += levels.mantissa(i);
  return static_cast<double>(
      sum / (static_cast<long double>(timesteps) * levels.size()));
}

void check_ids(const ModelConfig& cfg, std::span<const int> ids) {
  if (ids.size() != cfg.seq_len)
    throw std::invalid_argument("token sequence length mismatch");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab)
      throw std::out_of_range("token id outside vocabulary");
}

// ------------------------------------------------------- reference forward

// Calibration taps: reference activations collected per block site.
struct RefCapture {
  std::vector<std::vector<double>> input, queries, attn_out, ffn_in, ffn_act;
  std::vector<double> head_in;

  explicit RefCapture(std::size_t blocks)
      : input(blocks), queries(blocks), attn_out(blocks), ffn_in(blocks),
        ffn_act(blocks) {}
};

void append(std::vector<double>& dst, const std::vector<double>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

// x is [rows x w.rows]; returns [rows x w.cols]. Dense MAC accounting.
std::vector<double> dense_forward(const std::vector<double>& x,
                                  std::size_t rows, const DenseLinear& w) {
  std::vector<double> out(rows * w.cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < w.rows; ++k) {
      const double xv = x[r * w.rows + k];
      for (std::size_t j = 0; j < w.cols; ++j)
        out[r * w.cols + j] += xv * w.w[k * w.cols + j];
    }
  if (!w.bias.empty())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w.cols; ++j) out[r * w.cols + j] += w.bias[j];
  ops::mul(rows * w.rows * w.cols);
  ops::add(rows * (w.rows - 1) * w.cols +
           (w.bias.empty() ? 0 : rows * w.cols));
  return out;
}

ForwardResult reference_forward(const ReferenceModel& ref,
                                std::span<const int> ids, RefCapture* cap) {
  const ModelConfig& cfg = ref.cfg;
  check_ids(cfg, ids);
  const std::size_t seq = cfg.seq_len, d = cfg.dim, dk = cfg.head_dim();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<double> x(seq * d);
  for (std::size_t s = 0; s < seq; ++s)
    for (std::size_t c = 0; c < d; ++c)
      x[s * d + c] = ref.embedding[static_cast<std::size_t>(ids[s]) * d + c];

  ForwardResult res;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const ReferenceBlock& blk = ref.blocks[b];
    if (cap) append(cap->input[b], x);

    std::vector<double> q = dense_forward(x, seq, blk.wq);
    const std::vector<double> k = dense_forward(x, seq, blk.wk);
    const std::vector<double> v = dense_forward(x, seq, blk.wv);
    for (double& qv : q) qv *= alpha;  // attention scale lives on Q
    ops::mul(q.size());
    if (cap) append(cap->queries[b], q);

    std::vector<double> attn(seq * d, 0.0);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      for (std::size_t r = 0; r < seq; ++r) {
        std::vector<double> scores(seq, 0.0);
        for (std::size_t c = 0; c < seq; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dk; ++j)
            acc += q[r * d + h * dk + j] * k[c * d + h * dk + j];
          scores[c] = acc;
        }
        ops::mul(seq * dk);
        ops::add(seq * (dk - 1));
        const std::vector<double> probs = softmax_ref(scores);
        for (std::size_t j = 0; j < dk; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < seq; ++c)
            acc += probs[c] * v[c * d + h * dk + j];
          attn[r * d + h * dk + j] = acc;
        }
        ops::mul(dk * seq);
        ops::add(dk * (seq - 1));
      }
    }
    if (cap) append(cap->attn_out[b], attn);

    const std::vector<double> o = dense_forward(attn, seq, blk.wo);
    std::vector<double> r1(seq * d);
    for (std::size_t i = 0; i < r1.size(); ++i) r1[i] = x[i] + o[i];
    ops::add(r1.size());

    std::vector<double> y1(seq * d);
    for (std::size_t s = 0; s < seq; ++s) {
      const std::vector<double> row(r1.begin() + s * d,
                                    r1.begin() + (s + 1) * d);
      const std::vector<double> nr =
          layernorm_ref(row, blk.attn_norm.gamma, blk.attn_norm.beta);
      std::copy(nr.begin(), nr.end(), y1.begin() + s * d);
    }
    if (cap) append(cap->ffn_in[b], y1);

    std::vector<double> f1 = dense_forward(y1, seq, blk.ffn_in);
    for (double& fv : f1) fv = std::max(fv, 0.0);
    if (cap) append(cap->ffn_act[b], f1);
    const std::vector<double> f2 = dense_forward(f1, seq, blk.ffn_out);

    std::vector<double> r2(seq * d);
    for (std::size_t i = 0; i < r2.size(); ++i) r2[i] = y1[i] + f2[i];
    ops::add(r2.size());

    std::vector<double> y2(seq * d);
    for (std::size_t s = 0; s < seq; ++s) {
      const std::vector<double> row(r2.begin() + s * d,
                                    r2.begin() + (s + 1) * d);
      const std::vector<double> nr =
          layernorm_ref(row, blk.ffn_norm.gamma, blk.ffn_norm.beta);
      std::copy(nr.begin(), nr.end(), y2.begin() + s * d);
    }
    res.block_outputs.push_back(y2);
    x = std::move(y2);
  }

  const std::vector<double> cls(x.begin(), x.begin() + d);
  if (cap) append(cap->head_in, cls);
  res.logits = dense_forward(cls, 1, ref.head);
  return res;
}

// ------------------------------------------------------- quantized forward

struct Exec {
  Stage stage;
  const ModelConfig* cfg;
  std::vector<double>* site_rates = nullptr;
  std::uint64_t spikes = 0;
  std::uint64_t slots = 0;

  void note(const SpikeTrain& tr) {
    if (site_rates) site_rates->push_back(tr.rate());
    spikes += tr.total_spikes();
    slots += tr.timesteps() * tr.feature_size();
  }

  FixedTensor mm(const FixedTensor& levels, const BinaryLinear& w) {
    if (stage == Stage::snn) {
      const SpikeTrain tr = encode_rate(levels, cfg->timesteps);
      note(tr);
      return spiking_matmul(tr, w);
    }
    return level_matmul(levels, w);
  }

  FixedTensor mm(const FixedTensor& levels, const FixedTensor& rhs,
                 int level_exponent) {
    if (stage == Stage::snn) {
      const SpikeTrain tr = encode_rate(levels, cfg->timesteps);
      note(tr);
      return spiking_matmul(tr, rhs, level_exponent);
    }
    return level_matmul(levels, rhs, level_exponent);
  }
};

using NormHook =
    std::function<void(std::size_t block, int site, const FixedTensor&)>;

FixedTensor norm_apply(const QuantBlock& blk, const ModelConfig& cfg,
                       Stage stage, bool attn_side, const FixedTensor& x) {
  if (stage == Stage::m1 || stage == Stage::m2) {
    const AffineNorm& nm = attn_side ? blk.attn_norm : blk.ffn_norm;
    const std::size_t d = cfg.dim, rows = x.size() / d;
    FixedTensor out(x.shape(), cfg.frac_bits, 32);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> row(d);
      for (std::size_t c = 0; c < d; ++c) row[c] = x.real(r * d + c);
      const std::vector<double> nr = layernorm_ref(row, nm.gamma, nm.beta);
      for (std::size_t c = 0; c < d; ++c)
        out.set_mantissa(r * d + c,
                         FixedScalar::from_real(nr[c], cfg.frac_bits).mantissa);
    }
    return out;
  }
  return bspn_forward_infer(x, attn_side ? blk.attn_bspn : blk.ffn_bspn);
}

FixedTensor block_forward(const QuantBlock& blk, const ModelConfig& cfg,
                          Stage stage, Exec& ex, const FixedTensor& x,
                          const NormHook* hook, std::size_t bidx,
                          double* input_level_rate) {
  const std::size_t seq = x.shape()[0], d = cfg.dim, dk = cfg.head_dim();
  const int f_rest = cfg.frac_bits;
  const int lg_t = floor_log2(cfg.timesteps);

  const FixedTensor lv0 = elastic_quantize_levels(x, blk.sites.input);
  if (input_level_rate) *input_level_rate = level_rate(lv0, cfg.timesteps);

  const FixedTensor q =
      apply_exponent(ex.mm(lv0, blk.wq), blk.sites.input.k_alpha);
  const FixedTensor k =
      apply_exponent(ex.mm(lv0, blk.wk), blk.sites.input.k_alpha);
  const FixedTensor v =
      apply_exponent(ex.mm(lv0, blk.wv), blk.sites.input.k_alpha);

  const FixedTensor lvq = elastic_quantize_levels(q, blk.sites.queries);

  FixedTensor attn;
  bool attn_ready = false;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const FixedTensor lvq_h = slice_head(lvq, h, dk);
    const FixedTensor k_ht = transpose2(slice_head(k, h, dk));
    const FixedTensor s_h = ex.mm(lvq_h, k_ht, blk.sites.queries.k_alpha);

    FixedTensor lvp({seq, seq}, 0, 64);
    for (std::size_t r = 0; r < seq; ++r) {
      const FixedTensor s_row = row_slice(s_h, r);
      if (stage == Stage::m1) {
        const std::vector<double> probs = softmax_ref(s_row.to_reals());
        for (std::size_t c = 0; c < seq; ++c) {
          const auto lvl = static_cast<std::int64_t>(std::llround(
              probs[c] * static_cast<double>(cfg.timesteps)));
          lvp.set_mantissa(
              r * seq + c,
              std::clamp<std::int64_t>(
                  lvl, 0, static_cast<std::int64_t>(cfg.timesteps)));
        }
        ops::mul(seq);  // probability-to-level scaling
      } else {
        const Pow2Distribution pt = ptsoftmax(
            s_row, FixedScalar::from_real(cfg.clamp_max, s_row.frac_bits()),
            cfg.k_mode);
        const FixedTensor lv = quantize_pow2_to_levels(pt, cfg.timesteps);
        for (std::size_t c = 0; c < seq; ++c)
          lvp.set_mantissa(r * seq + c, lv.mantissa(c));
      }
    }

    const FixedTensor a_h = ex.mm(lvp, slice_head(v, h, dk), -lg_t);
    if (!attn_ready) {
      attn = FixedTensor({seq, d}, a_h.frac_bits(), 64);
      attn_ready = true;
    }
    write_head(attn, a_h, h, dk);
  }

  const FixedTensor lva = elastic_quantize_levels(attn, blk.sites.attn_out);
  const FixedTensor o =
      apply_exponent(ex.mm(lva, blk.wo), blk.sites.attn_out.k_alpha);
  const FixedTensor r1 = rescale_to_frac(add_aligned(x, o), f_rest, 32);
  if (hook) (*hook)(bidx, 0, r1);
  const FixedTensor y1 = norm_apply(blk, cfg, stage, true, r1);

  const FixedTensor lv4 = elastic_quantize_levels(y1, blk.sites.ffn_in);
  const FixedTensor f1 =
      apply_exponent(ex.mm(lv4, blk.ffn_in), blk.sites.ffn_in.k_alpha);
  const FixedTensor f1r = relu(f1);
  const FixedTensor lv5 = elastic_quantize_levels(f1r, blk.sites.ffn_act);
  const FixedTensor f2 =
      apply_exponent(ex.mm(lv5, blk.ffn_out), blk.sites.ffn_act.k_alpha);
  const FixedTensor r2 = rescale_to_frac(add_aligned(y1, f2), f_rest, 32);
  if (hook) (*hook)(bidx, 1, r2);
  return norm_apply(blk, cfg, stage, false, r2);
}

ForwardResult quant_forward(const StageModel& m, std::span<const int> ids,
                            const NormHook* hook) {
  const ModelConfig& cfg = m.cfg;
  check_ids(cfg, ids);
  const std::size_t seq = cfg.seq_len, d = cfg.dim;
  const bool spiking = m.stage == Stage::snn;

  FixedTensor x({seq, d}, cfg.frac_bits, 32);
  for (std::size_t s = 0; s < seq; ++s)
    for (std::size_t c = 0; c < d; ++c)
      x.set_mantissa(s * d + c,
                     m.embedding.mantissa(
                         static_cast<std::size_t>(ids[s]) * d + c));

  ForwardResult res;
  Exec ex{m.stage, &cfg, nullptr, 0, 0};
  if (spiking) {
    res.block_output_rates.assign(cfg.blocks, 0.0);
    ex.site_rates = &res.site_rates;
  }

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    double in_rate = 0.0;
    FixedTensor y = block_forward(m.blocks[b], cfg, m.stage, ex, x, hook, b,
                                  spiking ? &in_rate : nullptr);
    if (spiking && b >= 1) res.block_output_rates[b - 1] = in_rate;
    res.block_outputs.push_back(y.to_reals());
    x = std::move(y);
  }

  const FixedTensor cls = row_slice(x, 0);
  const FixedTensor lvh = elastic_quantize_levels(cls, m.head_site);
  if (spiking)
    res.block_output_rates[cfg.blocks - 1] = level_rate(lvh, cfg.timesteps);
  const FixedTensor logits =
      apply_exponent(ex.mm(lvh, m.head), m.head_site.k_alpha);
  res.logits = logits.to_reals();
  if (spiking && ex.slots > 0)
    res.avg_spike_rate =
        static_cast<double>(ex.spikes) / static_cast<double>(ex.slots);
  return res;
}

BspnState make_norm_state(const ModelConfig& cfg, const AffineNorm& nm) {
  BspnState st = BspnState::make(cfg.dim, cfg.heads, cfg.norm_layout,
                                 cfg.pow2_norm);
  st.gamma = nm.gamma;
  st.beta = nm.beta;
  return st;
}

constexpr std::size_t kCalibrationBattery = 8;

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::m0:
      return "m0";
    case Stage::m1:
      return "m1";
    case Stage::m2:
      return "m2";
    case Stage::m3:
      return "m3";
    case Stage::snn:
      return "snn";
  }
  throw std::invalid_argument("unknown stage");
}

void ModelConfig::validate() const {
  if (blocks == 0 || dim == 0 || heads == 0 || ffn_dim == 0 || seq_len == 0 ||
      vocab == 0 || classes == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (dim % heads != 0)
    throw std::invalid_argument("dim must be divisible by heads");
  if (timesteps < 2 || (timesteps & (timesteps - 1)) != 0)
    throw std::invalid_argument("timesteps must be a power of two >= 2");
  if (act_bits < 1 || act_bits > 16)
    throw std::invalid_argument("act_bits out of range");
  if (((std::size_t{1} << act_bits) - 1) > timesteps)
    throw std::invalid_argument(
        "activation levels exceed spike-encoding capacity");
  if (frac_bits < 1 || frac_bits > 24)
    throw std::invalid_argument("frac_bits out of range");
  if (!std::isfinite(clamp_max))
    throw std::invalid_argument("clamp_max must be finite");
}

ReferenceModel build_reference(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);

  ReferenceModel ref;
  ref.cfg = cfg;
  ref.embedding.resize(cfg.vocab * cfg.dim);
  for (double& v : ref.embedding) v = 0.5 * nd(rng);

  auto dense = [&](std::size_t rows, std::size_t cols, bool bias) {
    DenseLinear l;
    l.rows = rows;
    l.cols = cols;
    l.w.resize(rows * cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : l.w) v = scale * nd(rng);
    if (bias) {
      l.bias.resize(cols);
      for (double& v : l.bias) v = 0.1 * ud(rng);
    }
    return l;
  };
  auto norm = [&](std::size_t n) {
    AffineNorm a;
    a.gamma.resize(n);
    a.beta.resize(n);
    for (double& v : a.gamma) v = 1.0 + 0.2 * ud(rng);
    for (double& v : a.beta) v = 0.1 * ud(rng);
    return a;
  };

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    ReferenceBlock blk;
    blk.wq = dense(cfg.dim, cfg.dim, false);
    blk.wk = dense(cfg.dim, cfg.dim, false);
    blk.wv = dense(cfg.dim, cfg.dim, false);
    blk.wo = dense(cfg.dim, cfg.dim, false);
    blk.ffn_in = dense(cfg.dim, cfg.ffn_dim, false);
    blk.ffn_out = dense(cfg.ffn_dim, cfg.dim, false);
    blk.attn_norm = norm(cfg.dim);
    blk.ffn_norm = norm(cfg.dim);
    ref.blocks.push_back(std::move(blk));
  }
  ref.head = dense(cfg.dim, cfg.classes, true);
  return ref;
}

ForwardResult forward(const StageModel& model, std::span<const int> ids) {
  ops::CounterScope scope;
  ForwardResult res;
  if (model.stage == Stage::m0) {
    if (!model.reference)
      throw std::logic_error("reference stage without reference parameters");
    res = reference_forward(*model.reference, ids, nullptr);
  } else {
    res = quant_forward(model, ids, nullptr);
  }
  res.ops = scope.counts();
  return res;
}

StageModel stage_m0(std::shared_ptr<const ReferenceModel> ref) {
  if (!ref) throw std::invalid_argument("null reference model");
  StageModel m;
  m.stage = Stage::m0;
  m.cfg = ref->cfg;
  m.reference = std::move(ref);
  return m;
}

StageModel quantize_to_m1(std::shared_ptr<const ReferenceModel> ref) {
  if (!ref) throw std::invalid_argument("null reference model");
  const ModelConfig& cfg = ref->cfg;
  cfg.validate();

  // Calibration battery through the reference model.
  RefCapture cap(cfg.blocks);
  for (std::size_t i = 0; i < kCalibrationBattery; ++i) {
    const std::vector<int> ids =
        random_token_ids(cfg, mix_seed(cfg.seed, 777 + i));
    reference_forward(*ref, ids, &cap);
  }

  StageModel m;
  m.stage = Stage::m1;
  m.cfg = cfg;
  m.reference = ref;
  m.embedding =
      FixedTensor::from_reals(ref->embedding, {cfg.vocab, cfg.dim},
                              cfg.frac_bits, 32);

  const double alpha = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const ReferenceBlock& rb = ref->blocks[b];
    QuantBlock qb;
    qb.wq = binarize_weights(rb.wq.w, cfg.dim, cfg.dim);
    qb.wq.scale_exponent += pow2_scale(alpha);  // fold the attention scale
    qb.wk = binarize_weights(rb.wk.w, cfg.dim, cfg.dim);
    qb.wv = binarize_weights(rb.wv.w, cfg.dim, cfg.dim);
    qb.wo = binarize_weights(rb.wo.w, cfg.dim, cfg.dim);
    qb.ffn_in = binarize_weights(rb.ffn_in.w, cfg.dim, cfg.ffn_dim);
    qb.ffn_out = binarize_weights(rb.ffn_out.w, cfg.ffn_dim, cfg.dim);
    qb.attn_norm = rb.attn_norm;
    qb.ffn_norm = rb.ffn_norm;
    qb.attn_bspn = make_norm_state(cfg, rb.attn_norm);
    qb.ffn_bspn = make_norm_state(cfg, rb.ffn_norm);
    qb.sites.input = ElasticParams::calibrate(cap.input[b], cfg.act_bits);
    qb.sites.queries = ElasticParams::calibrate(cap.queries[b], cfg.act_bits);
    qb.sites.attn_out =
        ElasticParams::calibrate(cap.attn_out[b], cfg.act_bits);
    qb.sites.ffn_in = ElasticParams::calibrate(cap.ffn_in[b], cfg.act_bits);
    qb.sites.ffn_act = ElasticParams::calibrate(cap.ffn_act[b], cfg.act_bits);
    m.blocks.push_back(std::move(qb));
  }

  m.head = binarize_weights(ref->head.w, cfg.dim, cfg.classes);
  m.head.out_bias = FixedTensor::from_reals(ref->head.bias, {cfg.classes},
                                            cfg.frac_bits, 32);
  m.head_site = ElasticParams::calibrate(cap.head_in, cfg.act_bits);
  return m;
}

StageModel to_m2(const StageModel& m1) {
  if (m1.stage != Stage::m1)
    throw std::invalid_argument("expected a stage-m1 model");
  StageModel m = m1;
  m.stage = Stage::m2;
  return m;
}

StageModel to_m3(const StageModel& m2) {
  if (m2.stage != Stage::m2)
    throw std::invalid_argument("expected a stage-m2 model");
  StageModel m = m2;
  const ModelConfig& cfg = m.cfg;

  // Norm-input batches collected from an m2 battery: [block][side] rows.
  std::vector<std::array<std::vector<std::int64_t>, 2>> taps(cfg.blocks);
  NormHook hook = [&](std::size_t b, int site, const FixedTensor& t) {
    auto& dst = taps[b][static_cast<std::size_t>(site)];
    dst.insert(dst.end(), t.mantissas().begin(), t.mantissas().end());
  };
  for (std::size_t i = 0; i < kCalibrationBattery; ++i) {
    const std::vector<int> ids =
        random_token_ids(cfg, mix_seed(cfg.seed, 888 + i));
    quant_forward(m, ids, &hook);
  }

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (int side = 0; side < 2; ++side) {
      auto& rows = taps[b][static_cast<std::size_t>(side)];
      const std::size_t n = rows.size() / cfg.dim;
      const FixedTensor batch = FixedTensor::from_mantissas(
          std::move(rows), {n, cfg.dim}, cfg.frac_bits, 32);
      BspnState& st =
          side == 0 ? m.blocks[b].attn_bspn : m.blocks[b].ffn_bspn;
      const double momentum = st.momentum_alpha;
      st.momentum_alpha = 0.0;  // one-shot statistics for calibration
      bspn_forward_train(batch, st);
      st.momentum_alpha = momentum;
      st.freeze(cfg.frac_bits);
    }
  }
  m.stage = Stage::m3;
  return m;
}

StageModel to_snn(const StageModel& m3) {
  if (m3.stage != Stage::m3)
    throw std::invalid_argument("expected a stage-m3 model");
  StageModel m = m3;
  m.stage = Stage::snn;
  return m;
}

FixedTensor sorbet_block(const QuantBlock& blk, const ModelConfig& cfg,
                         Stage stage, const FixedTensor& x) {
  if (stage == Stage::m0)
    throw std::invalid_argument("reference stage has no fixed-point block");
  if (x.rank() != 2 || x.shape()[1] != cfg.dim)
    throw std::invalid_argument("block input must be [seq x dim]");
  Exec ex{stage, &cfg, nullptr, 0, 0};
  return block_forward(blk, cfg, stage, ex, x, nullptr, 0, nullptr);
}

PipelineResult transform_pipeline(std::shared_ptr<const ReferenceModel> ref,
                                  std::size_t battery, std::uint64_t seed) {
  if (battery == 0) throw std::invalid_argument("battery must be >= 1");
  PipelineResult out;
  out.battery = battery;

  out.stages.push_back(stage_m0(ref));
  out.stages.push_back(quantize_to_m1(ref));
  out.stages.push_back(to_m2(out.stages[1]));
  out.stages.push_back(to_m3(out.stages[2]));
  out.stages.push_back(to_snn(out.stages[3]));

  const ModelConfig& cfg = ref->cfg;
  std::vector<std::vector<int>> ids;
  ids.reserve(battery);
  for (std::size_t i = 0; i < battery; ++i)
    ids.push_back(random_token_ids(cfg, mix_seed(seed, 500 + i)));

  std::vector<std::vector<ForwardResult>> runs(out.stages.size());
  for (std::size_t s = 0; s < out.stages.size(); ++s)
    for (const auto& seqids : ids)
      runs[s].push_back(forward(out.stages[s], seqids));

  for (std::size_t s = 0; s + 1 < out.stages.size(); ++s) {
    StageDeviation dev;
    dev.from = stage_name(out.stages[s].stage);
    dev.to = stage_name(out.stages[s + 1].stage);
    long double sum = 0.0L;
    std::size_t count = 0;
    for (std::size_t i = 0; i < battery; ++i) {
      auto tally = [&](const std::vector<double>& a,
                       const std::vector<double>& b) {
        for (std::size_t j = 0; j < a.size(); ++j) {
          const double d = std::fabs(a[j] - b[j]);
          dev.max_abs = std::max(dev.max_abs, d);
          sum += d;
          ++count;
        }
      };
      tally(runs[s][i].logits, runs[s + 1][i].logits);
      for (std::size_t b = 0; b < cfg.blocks; ++b)
        tally(runs[s][i].block_outputs[b], runs[s + 1][i].block_outputs[b]);
    }
    dev.mean_abs = count ? static_cast<double>(sum / count) : 0.0;
    out.deviations.push_back(std::move(dev));
  }

  out.snn_matches_m3 = true;
  for (std::size_t i = 0; i < battery; ++i) {
    const ForwardResult& a = runs[3][i];
    const ForwardResult& b = runs[4][i];
    if (a.logits != b.logits || a.block_outputs != b.block_outputs)
      out.snn_matches_m3 = false;
  }

  out.m3_ops = runs[3][0].ops;
  out.snn_ops = runs[4][0].ops;
  long double rate = 0.0L;
  for (const auto& r : runs[4]) rate += r.avg_spike_rate;
  out.snn_avg_spike_rate = static_cast<double>(rate / battery);
  return out;
}

SpikeReport measure_block_spike_rates(const StageModel& snn,
                                      std::size_t battery,
                                      std::uint64_t seed) {
  if (snn.stage != Stage::snn)
    throw std::invalid_argument("expected a spiking-stage model");
  if (battery == 0) throw std::invalid_argument("battery must be >= 1");
  SpikeReport rep;
  rep.battery = battery;
  rep.block_rates.assign(snn.cfg.blocks, 0.0);
  long double avg = 0.0L;
  for (std::size_t i = 0; i < battery; ++i) {
    const std::vector<int> ids =
        random_token_ids(snn.cfg, mix_seed(seed, 300 + i));
    const ForwardResult r = forward(snn, ids);
    for (std::size_t b = 0; b < snn.cfg.blocks; ++b)
      rep.block_rates[b] += r.block_output_rates[b];
    avg += r.avg_spike_rate;
  }
  for (double& v : rep.block_rates) v /= static_cast<double>(battery);
  rep.average_rate = static_cast<double>(avg / battery);
  return rep;
}

std::vector<int> random_token_ids(const ModelConfig& cfg, std::uint64_t seed) {
  std::vector<int> ids(cfg.seq_len);
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = static_cast<int>(mix_seed(seed, i) % cfg.vocab);
  return ids;
}

}  // namespace sorbet
