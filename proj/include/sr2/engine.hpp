#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sr2/errors.hpp"
#include "sr2/parallel.hpp"
#include "sr2/rng.hpp"
#include "sr2/tensor.hpp"
#include "sr2/transformer.hpp"

namespace sr2 {

// ---------------------------------------------------------------------------
// Schedule configuration.
//
// The refinement schedule runs n blocks of m inner iterations each (T = m*n
// total applications of the shared transformer block). Blocks listed in
// reflection_blocks fuse the input embedding into every one of their
// iterations; the rest run input-free. After each block in the alignment
// set the head produces logits that receive supervision, and the latent is
// detached at block boundaries so each alignment segment backpropagates
// only through its own block.
// ---------------------------------------------------------------------------

struct SR2Config {
  int m = 4;
  int n = 4;
  std::vector<int> reflection_blocks = {1};  // 1-based block indices
  std::vector<int> alignment_set = {};       // empty = every block
  bool detach_between_blocks = true;
  int test_time_blocks = 0;  // 0 = use n at evaluation

  int total_steps() const { return m * n; }

  std::vector<int> alignment() const {
    if (!alignment_set.empty()) {
      std::vector<int> a = alignment_set;
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
      return a;
    }
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int b = 1; b <= n; ++b) all[static_cast<std::size_t>(b - 1)] = b;
    return all;
  }

  void validate() const {
    if (m < 1 || n < 1) throw UsageError("schedule: m and n must be >= 1");
    if (reflection_blocks.empty()) {
      throw UsageError("schedule: at least one reflection block required");
    }
    for (int b : reflection_blocks) {
      if (b < 1 || b > n) {
        throw UsageError("schedule: reflection block " + std::to_string(b) +
                         " outside 1.." + std::to_string(n));
      }
    }
    const std::vector<int> a = alignment();
    for (int b : a) {
      if (b < 1 || b > n) {
        throw UsageError("schedule: alignment block " + std::to_string(b) +
                         " outside 1.." + std::to_string(n));
      }
    }
    if (a.back() != n) {
      throw UsageError("schedule: final block must be supervised");
    }
    if (test_time_blocks < 0) {
      throw UsageError("schedule: test_time_blocks must be >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// A compiled schedule: the common currency every model variant reduces to.
// Step s applies block params[steps[s].param], fusing the input embedding
// first when steps[s].inject is set. Alignment and detach points are step
// indices (0-based, "after this step").
// ---------------------------------------------------------------------------

struct PlanStep {
  int param = 0;
  bool inject = false;
};

struct SchedulePlan {
  std::vector<PlanStep> steps;
  std::vector<int> align_after;   // strictly increasing step indices
  std::vector<int> align_labels;  // reported block/unit label per alignment
  std::vector<int> detach_after;  // strictly increasing step indices
  int n_param_blocks = 1;

  void validate() const {
    if (steps.empty()) throw UsageError("plan: no steps");
    if (align_after.empty() ||
        align_after.back() != static_cast<int>(steps.size()) - 1) {
      throw UsageError("plan: the final step must be supervised");
    }
    if (align_labels.size() != align_after.size()) {
      throw UsageError("plan: alignment labels out of sync");
    }
    for (std::size_t i = 1; i < align_after.size(); ++i) {
      if (align_after[i] <= align_after[i - 1]) {
        throw UsageError("plan: alignment points must increase");
      }
    }
    for (std::size_t i = 1; i < detach_after.size(); ++i) {
      if (detach_after[i] <= detach_after[i - 1]) {
        throw UsageError("plan: detach points must increase");
      }
    }
    for (const PlanStep& s : steps) {
      if (s.param < 0 || s.param >= n_param_blocks) {
        throw UsageError("plan: step references missing parameter block");
      }
    }
  }
};

// Compile the refinement schedule into a plan. override_n replaces the
// number of blocks at evaluation time (the test-time compute knob); when it
// is set, reflection/alignment block indices beyond the new horizon drop
// out. align_final_only restricts supervision to the last block (what
// evaluation needs).
inline SchedulePlan sr2_plan(const SR2Config& cfg, int override_n = 0,
                             bool align_final_only = false) {
  cfg.validate();
  const int n = override_n > 0 ? override_n : cfg.n;
  const int m = cfg.m;

  std::vector<bool> inject_block(static_cast<std::size_t>(n) + 1, false);
  bool any = false;
  for (int b : cfg.reflection_blocks) {
    if (b <= n) {
      inject_block[static_cast<std::size_t>(b)] = true;
      any = true;
    }
  }
  if (!any) inject_block[1] = true;  // a shrunk horizon keeps the entry block

  std::vector<int> align;
  if (align_final_only) {
    align = {n};
  } else {
    for (int b : cfg.alignment()) {
      if (b <= n) align.push_back(b);
    }
    if (align.empty() || align.back() != n) align.push_back(n);
  }

  SchedulePlan plan;
  plan.n_param_blocks = 1;
  plan.steps.resize(static_cast<std::size_t>(m) * n);
  for (int b = 1; b <= n; ++b) {
    for (int i = 0; i < m; ++i) {
      plan.steps[static_cast<std::size_t>((b - 1) * m + i)] = {
          0, inject_block[static_cast<std::size_t>(b)]};
    }
  }
  for (int b : align) {
    plan.align_after.push_back(b * m - 1);
    plan.align_labels.push_back(b);
  }
  if (cfg.detach_between_blocks) {
    for (int b = 1; b < n; ++b) plan.detach_after.push_back(b * m - 1);
  }
  plan.validate();
  return plan;
}

// ---------------------------------------------------------------------------
// Model: parameter blocks + IO params + the compiled plan.
// ---------------------------------------------------------------------------

template <class T>
struct Model {
  ModelConfig mc;
  std::vector<BlockParams<T>> blocks;
  IOParams<T> io;
  SchedulePlan plan;

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& b : blocks) {
      for (auto* t : b.params()) out.push_back(t);
    }
    for (auto* t : io.params()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      for (auto& kv : blocks[i].named_params("block" + std::to_string(i))) {
        out.push_back(kv);
      }
    }
    for (auto& kv : io.named_params("io")) out.push_back(kv);
    return out;
  }

  std::int64_t param_count() const {
    std::int64_t total = io.param_count();
    for (const auto& b : blocks) total += b.param_count();
    return total;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Forward execution of a plan.
// ---------------------------------------------------------------------------

template <class T>
struct AlignedOutput {
  int label = 0;
  Tensor<T> logits;
  Tensor<T> z;
};

template <class T>
struct ForwardOut {
  std::vector<AlignedOutput<T>> aligned;
  Tensor<T> final_z;
  std::vector<Tensor<T>> boundaries;  // detached leaves, in plan order
  std::int64_t block_applies = 0;
};

template <class T>
ForwardOut<T> plan_forward(const std::vector<int>& tokens, int batch,
                           const std::vector<BlockParams<T>>& blocks,
                           const IOParams<T>& io, const ModelConfig& mc,
                           const SchedulePlan& plan,
                           bool record_boundaries = false) {
  plan.validate();
  const int seq = io.pos.dim(0);
  bool needs_input = false;
  for (const PlanStep& s : plan.steps) needs_input |= s.inject;

  Tensor<T> x_emb;
  if (needs_input) x_emb = embed_input(tokens, batch, io);

  ForwardOut<T> out;
  Tensor<T> z = Tensor<T>::zeros({batch, seq, mc.d_model});
  std::size_t ai = 0, di = 0;
  for (int s = 0; s < static_cast<int>(plan.steps.size()); ++s) {
    const PlanStep& st = plan.steps[static_cast<std::size_t>(s)];
    Tensor<T> zin = st.inject ? reflect_fuse(z, x_emb) : z;
    z = block_forward(zin, blocks[static_cast<std::size_t>(st.param)], mc);
    ++out.block_applies;
    if (ai < plan.align_after.size() && plan.align_after[ai] == s) {
      out.aligned.push_back({plan.align_labels[ai], head(z, io), z});
      ++ai;
    }
    if (di < plan.detach_after.size() && plan.detach_after[di] == s) {
      z = detach(z);
      if (record_boundaries) out.boundaries.push_back(z);
      ++di;
    }
  }
  out.final_z = z;
  return out;
}

// Schedule entry point matching the configuration type directly.
template <class T>
ForwardOut<T> sr2_forward(const std::vector<int>& tokens, int batch,
                          const BlockParams<T>& block, const IOParams<T>& io,
                          const ModelConfig& mc, const SR2Config& cfg,
                          bool record_boundaries = false) {
  std::vector<BlockParams<T>> one = {block};
  return plan_forward(tokens, batch, one, io, mc, sr2_plan(cfg), record_boundaries);
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with an atan2-shaped, inherently bounded update.
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta -= lr * atan2(m_hat, sqrt(v_hat))
// No epsilon, no weight decay; |update| <= lr*pi/2 by the range of atan2.
// ---------------------------------------------------------------------------

template <class T>
struct AdamAtan2 {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::int64_t t = 0;
  std::vector<std::vector<T>> m1, m2;

  void reset(const std::vector<Tensor<T>*>& params) {
    t = 0;
    m1.clear();
    m2.clear();
    for (auto* p : params) {
      m1.emplace_back(p->data->size(), T(0));
      m2.emplace_back(p->data->size(), T(0));
    }
  }

  void step(const std::vector<Tensor<T>*>& params) {
    if (m1.empty()) reset(params);
    if (m1.size() != params.size()) {
      throw DimensionError("optimizer: moment arrays do not match parameters");
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      if (m1[k].size() != p.data->size()) {
        throw DimensionError("optimizer: moment size mismatch on parameter " +
                             std::to_string(k));
      }
      const std::vector<T>& g = *p.grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = double(g[i]);
        const double mi = beta1 * double(m1[k][i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * double(m2[k][i]) + (1.0 - beta2) * gi * gi;
        m1[k][i] = T(mi);
        m2[k][i] = T(vi);
        (*p.data)[i] -= T(lr * std::atan2(mi / c1, std::sqrt(vi / c2)));
      }
    }
  }
};

template <class T>
struct TrainState {
  int epoch = 0;
  std::int64_t step = 0;  // optimizer steps taken
  AdamAtan2<T> opt;
  Rng rng = make_rng(0);
};

// ---------------------------------------------------------------------------
// Batches and metrics.
// ---------------------------------------------------------------------------

struct Batch {
  int batch = 0;
  int seq = 0;
  std::vector<int> tokens;             // batch*seq input token ids
  std::vector<int> targets;            // batch*seq target classes
  std::vector<std::uint8_t> loss_mask; // optional, batch*seq; empty = all
};

struct Metrics {
  std::vector<std::pair<int, double>> loss_per_alignment;  // (label, mean loss)
  double cell_acc = 0.0;
  double pass1 = 0.0;
  double wall_s = 0.0;
  double samples_per_s = 0.0;

  double final_loss() const {
    return loss_per_alignment.empty() ? 0.0 : loss_per_alignment.back().second;
  }
};

// Per-batch instrumentation used by tests and diagnostics.
template <class T>
struct BatchTrace {
  std::vector<int> labels;
  std::vector<double> losses;
  // d(alignment loss)/d(detached z entering the segment), one entry per
  // alignment that had a preceding boundary; empty vectors otherwise.
  std::vector<std::vector<T>> boundary_grads;
  std::int64_t block_applies = 0;
};

struct TrainOptions {
  int batch_size = 64;
  bool summed_losses = false;  // one step on the sum instead of per alignment
  int mask_blank_token = -1;   // >=0: score only positions whose input == token
  std::function<void(std::vector<int>&, std::vector<int>&, Rng&)> augment;
};

namespace detail {

// Cut the plan at detach points: [begin, end) step ranges.
inline std::vector<std::pair<int, int>> plan_chunks(const SchedulePlan& plan) {
  std::vector<std::pair<int, int>> chunks;
  int begin = 0;
  for (int d : plan.detach_after) {
    chunks.emplace_back(begin, d + 1);
    begin = d + 1;
  }
  if (begin < static_cast<int>(plan.steps.size())) {
    chunks.emplace_back(begin, static_cast<int>(plan.steps.size()));
  }
  return chunks;
}

template <class T>
Tensor<T> leaf_from(const Shape& shape, const std::vector<T>& values, bool rg) {
  Tensor<T> t = Tensor<T>::from_data(shape, values, rg);
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training on one batch, per-alignment stepping (the default): for every
// supervised point, in schedule order — zero grads, loss against the final
// target, backward to the nearest upstream detach boundary, optimizer step.
// The graph for each supervised point is built fresh from its boundary so
// consecutive backward passes never share tape nodes.
// ---------------------------------------------------------------------------

template <class T>
void train_batch(Model<T>& model, TrainState<T>& state, const Batch& b,
                 const TrainOptions& opts, BatchTrace<T>* trace = nullptr) {
  const SchedulePlan& plan = model.plan;
  plan.validate();
  auto params = model.params();

  auto loss_of = [&](const Tensor<T>& z) {
    Tensor<T> logits = head(z, model.io);
    return cross_entropy(logits, b.targets, b.loss_mask);
  };
  auto run_steps = [&](Tensor<T> z, int from, int to,
                       const Tensor<T>& x_emb) {
    for (int s = from; s < to; ++s) {
      const PlanStep& st = plan.steps[static_cast<std::size_t>(s)];
      Tensor<T> zin = st.inject ? reflect_fuse(z, x_emb) : z;
      z = block_forward(zin, model.blocks[static_cast<std::size_t>(st.param)],
                        model.mc);
      if (trace) ++trace->block_applies;
    }
    return z;
  };
  auto chunk_injects = [&](int from, int to) {
    for (int s = from; s < to; ++s) {
      if (plan.steps[static_cast<std::size_t>(s)].inject) return true;
    }
    return false;
  };
  auto record = [&](int label, double loss_value,
                    const Tensor<T>* boundary_leaf) {
    if (!std::isfinite(loss_value)) {
      throw NumericError("train: non-finite loss at optimizer step " +
                         std::to_string(state.step) + ", alignment block " +
                         std::to_string(label) + ": " +
                         std::to_string(loss_value));
    }
    if (trace) {
      trace->labels.push_back(label);
      trace->losses.push_back(loss_value);
      if (boundary_leaf && boundary_leaf->grad) {
        trace->boundary_grads.push_back(*boundary_leaf->grad);
      } else {
        trace->boundary_grads.emplace_back();
      }
    }
  };

  const Shape zshape{b.batch, b.seq, model.mc.d_model};
  std::vector<T> z_vals(static_cast<std::size_t>(shape_numel(zshape)), T(0));
  bool at_start = true;

  if (opts.summed_losses) {
    // One backward over the whole (detach-respecting) graph, one step.
    model.zero_grad();
    ForwardOut<T> fw = plan_forward(b.tokens, b.batch, model.blocks, model.io,
                                    model.mc, plan, false);
    if (trace) trace->block_applies += fw.block_applies;
    Tensor<T> total;
    for (std::size_t i = 0; i < fw.aligned.size(); ++i) {
      Tensor<T> li = cross_entropy(fw.aligned[i].logits, b.targets, b.loss_mask);
      record(fw.aligned[i].label, double(li.item()), nullptr);
      total = (i == 0) ? li : add(total, li);
    }
    backward(total);
    state.opt.step(params);
    ++state.step;
    return;
  }

  const auto chunks = detail::plan_chunks(plan);
  std::size_t ai = 0;  // index into plan.align_after
  for (const auto& [from, to] : chunks) {
    std::vector<int> aligns;
    while (ai < plan.align_after.size() && plan.align_after[ai] < to) {
      aligns.push_back(static_cast<int>(ai));
      ++ai;
    }

    if (aligns.empty()) {
      NoGradGuard off;
      Tensor<T> z0 = detail::leaf_from(zshape, z_vals, false);
      Tensor<T> x_emb;
      if (chunk_injects(from, to)) x_emb = embed_input(b.tokens, b.batch, model.io);
      Tensor<T> zend = run_steps(z0, from, to, x_emb);
      z_vals = zend.values();
      at_start = false;
      continue;
    }

    const bool single_tail = aligns.size() == 1 &&
        plan.align_after[static_cast<std::size_t>(aligns[0])] == to - 1;
    if (single_tail) {
      Tensor<T> z0 = detail::leaf_from(zshape, z_vals, !at_start);
      Tensor<T> x_emb;
      if (chunk_injects(from, to)) x_emb = embed_input(b.tokens, b.batch, model.io);
      Tensor<T> zend = run_steps(z0, from, to, x_emb);
      Tensor<T> loss = loss_of(zend);
      model.zero_grad();
      if (z0.requires_grad) z0.zero_grad();
      backward(loss);
      record(plan.align_labels[static_cast<std::size_t>(aligns[0])],
             double(loss.item()), at_start ? nullptr : &z0);
      state.opt.step(params);
      ++state.step;
      z_vals = zend.values();  // carried values predate this step, as the
                               // incremental-graph formulation implies
      at_start = false;
      continue;
    }

    // Supervision interior to a chunk: rebuild the segment fresh for each
    // supervised point (parameters change between steps), then advance the
    // carried state with one grad-free pass over the chunk.
    for (int a : aligns) {
      const int upto = plan.align_after[static_cast<std::size_t>(a)] + 1;
      Tensor<T> z0 = detail::leaf_from(zshape, z_vals, !at_start);
      Tensor<T> x_emb;
      if (chunk_injects(from, upto)) x_emb = embed_input(b.tokens, b.batch, model.io);
      Tensor<T> zend = run_steps(z0, from, upto, x_emb);
      Tensor<T> loss = loss_of(zend);
      model.zero_grad();
      if (z0.requires_grad) z0.zero_grad();
      backward(loss);
      record(plan.align_labels[static_cast<std::size_t>(a)], double(loss.item()),
             at_start ? nullptr : &z0);
      state.opt.step(params);
      ++state.step;
    }
    {
      NoGradGuard off;
      Tensor<T> z0 = detail::leaf_from(zshape, z_vals, false);
      Tensor<T> x_emb;
      if (chunk_injects(from, to)) x_emb = embed_input(b.tokens, b.batch, model.io);
      Tensor<T> zend = run_steps(z0, from, to, x_emb);
      z_vals = zend.values();
    }
    at_start = false;
  }
}

// ---------------------------------------------------------------------------
// Dataset plumbing shared by training and evaluation.
// ---------------------------------------------------------------------------

struct Example {
  std::vector<int> input;
  std::vector<int> target;
  std::uint64_t id = 0;
};

inline Batch make_batch(const std::vector<Example>& data,
                        const std::vector<int>& order, std::size_t begin,
                        std::size_t end, int mask_blank_token,
                        const TrainOptions* opts = nullptr, Rng* rng = nullptr) {
  Batch b;
  b.batch = static_cast<int>(end - begin);
  b.seq = static_cast<int>(data[static_cast<std::size_t>(order[begin])].input.size());
  b.tokens.reserve(static_cast<std::size_t>(b.batch) * b.seq);
  b.targets.reserve(static_cast<std::size_t>(b.batch) * b.seq);
  for (std::size_t i = begin; i < end; ++i) {
    const Example& e = data[static_cast<std::size_t>(order[i])];
    if (static_cast<int>(e.input.size()) != b.seq ||
        e.target.size() != e.input.size()) {
      throw DimensionError("batch: ragged example lengths");
    }
    std::vector<int> in = e.input, tg = e.target;
    if (opts && opts->augment && rng) opts->augment(in, tg, *rng);
    b.tokens.insert(b.tokens.end(), in.begin(), in.end());
    b.targets.insert(b.targets.end(), tg.begin(), tg.end());
  }
  if (mask_blank_token >= 0) {
    b.loss_mask.resize(b.tokens.size());
    for (std::size_t i = 0; i < b.tokens.size(); ++i) {
      b.loss_mask[i] = b.tokens[i] == mask_blank_token ? 1 : 0;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// One pass over the dataset. Shuffles with the training RNG, then runs
// train_batch per batch; metrics aggregate the per-alignment losses and
// final-alignment accuracy across batches.
// ---------------------------------------------------------------------------

template <class T>
Metrics train_epoch(const std::vector<Example>& data, Model<T>& model,
                    TrainState<T>& state, const TrainOptions& opts) {
  if (data.empty()) throw UsageError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_in_place(order, state.rng);

  std::vector<int> labels;
  std::vector<double> loss_sums;
  std::int64_t cells_total = 0, cells_hit = 0, inst_total = 0, inst_hit = 0;
  std::size_t batches = 0;

  for (std::size_t begin = 0; begin < data.size();
       begin += static_cast<std::size_t>(opts.batch_size)) {
    const std::size_t end =
        std::min(data.size(), begin + static_cast<std::size_t>(opts.batch_size));
    Batch b = make_batch(data, order, begin, end, opts.mask_blank_token, &opts,
                         &state.rng);
    BatchTrace<T> trace;
    train_batch(model, state, b, opts, &trace);
    ++batches;

    if (labels.empty()) {
      labels = trace.labels;
      loss_sums.assign(labels.size(), 0.0);
    }
    for (std::size_t i = 0; i < trace.losses.size() && i < loss_sums.size(); ++i) {
      loss_sums[i] += trace.losses[i];
    }

    // Training-set accuracy from a grad-free pass with the just-updated
    // parameters (cheap at desk scale and reflects what was learned).
    NoGradGuard off;
    ForwardOut<T> fw = plan_forward(b.tokens, b.batch, model.blocks, model.io,
                                    model.mc, model.plan, false);
    const std::vector<int> pred = argmax(fw.aligned.back().logits, -1);
    for (int inst = 0; inst < b.batch; ++inst) {
      bool all = true;
      for (int spos = 0; spos < b.seq; ++spos) {
        const std::size_t k = static_cast<std::size_t>(inst) * b.seq + spos;
        const bool hit = pred[k] == b.targets[k];
        cells_total += 1;
        cells_hit += hit ? 1 : 0;
        all &= hit;
      }
      inst_total += 1;
      inst_hit += all ? 1 : 0;
    }
  }
  ++state.epoch;

  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m.loss_per_alignment.emplace_back(labels[i],
                                      loss_sums[i] / double(batches));
  }
  m.cell_acc = cells_total ? double(cells_hit) / double(cells_total) : 0.0;
  m.pass1 = inst_total ? double(inst_hit) / double(inst_total) : 0.0;
  m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                 .count();
  m.samples_per_s = m.wall_s > 0 ? double(data.size()) / m.wall_s : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation: grad-free forward passes, argmax prediction, exact-match and
// per-cell accuracy. Parallel over contiguous batch ranges; results are
// combined in range order so the thread count never changes the numbers.
// ---------------------------------------------------------------------------

struct EvalOptions {
  int batch_size = 64;
  int threads = 1;
  const SchedulePlan* plan_override = nullptr;  // e.g. a shrunk horizon
};

template <class T>
Metrics evaluate(const std::vector<Example>& data, Model<T>& model,
                 const EvalOptions& opts = {}) {
  if (data.empty()) throw UsageError("eval: empty dataset");
  const SchedulePlan& plan =
      opts.plan_override ? *opts.plan_override : model.plan;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const std::size_t n_batches =
      (data.size() + static_cast<std::size_t>(opts.batch_size) - 1) /
      static_cast<std::size_t>(opts.batch_size);

  struct Part {
    std::vector<double> loss_sums;
    std::vector<int> labels;
    std::int64_t cells_total = 0, cells_hit = 0, inst_total = 0, inst_hit = 0;
    std::size_t batches = 0;
  };
  std::vector<Part> parts(std::max<std::size_t>(std::size_t(1),
      std::min(n_batches, static_cast<std::size_t>(std::max(1, opts.threads)))));

  parallel_for(static_cast<std::int64_t>(n_batches), static_cast<int>(parts.size()),
               [&](int chunk, std::int64_t bfrom, std::int64_t bto) {
    NoGradGuard off;
    Part& part = parts[static_cast<std::size_t>(chunk)];
    for (std::int64_t bi = bfrom; bi < bto; ++bi) {
      const std::size_t begin = static_cast<std::size_t>(bi) *
                                static_cast<std::size_t>(opts.batch_size);
      const std::size_t end =
          std::min(data.size(), begin + static_cast<std::size_t>(opts.batch_size));
      Batch b = make_batch(data, order, begin, end, -1);
      ForwardOut<T> fw = plan_forward(b.tokens, b.batch, model.blocks, model.io,
                                      model.mc, plan, false);
      if (part.labels.empty()) {
        for (const auto& a : fw.aligned) part.labels.push_back(a.label);
        part.loss_sums.assign(fw.aligned.size(), 0.0);
      }
      for (std::size_t i = 0; i < fw.aligned.size(); ++i) {
        part.loss_sums[i] +=
            double(cross_entropy(fw.aligned[i].logits, b.targets).item());
      }
      const std::vector<int> pred = argmax(fw.aligned.back().logits, -1);
      for (int inst = 0; inst < b.batch; ++inst) {
        bool all = true;
        for (int spos = 0; spos < b.seq; ++spos) {
          const std::size_t k = static_cast<std::size_t>(inst) * b.seq + spos;
          const bool hit = pred[k] == b.targets[k];
          part.cells_total += 1;
          part.cells_hit += hit ? 1 : 0;
          all &= hit;
        }
        part.inst_total += 1;
        part.inst_hit += all ? 1 : 0;
      }
      part.batches += 1;
    }
  });

  Metrics m;
  std::vector<double> loss_sums;
  std::vector<int> labels;
  std::int64_t cells_total = 0, cells_hit = 0, inst_total = 0, inst_hit = 0;
  std::size_t batches = 0;
  for (const Part& p : parts) {
    if (labels.empty() && !p.labels.empty()) {
      labels = p.labels;
      loss_sums.assign(labels.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.loss_sums.size() && i < loss_sums.size(); ++i) {
      loss_sums[i] += p.loss_sums[i];
    }
    cells_total += p.cells_total;
    cells_hit += p.cells_hit;
    inst_total += p.inst_total;
    inst_hit += p.inst_hit;
    batches += p.batches;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m.loss_per_alignment.emplace_back(labels[i], loss_sums[i] / double(batches));
  }
  m.cell_acc = cells_total ? double(cells_hit) / double(cells_total) : 0.0;
  m.pass1 = inst_total ? double(inst_hit) / double(inst_total) : 0.0;
  m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                 .count();
  m.samples_per_s = m.wall_s > 0 ? double(data.size()) / m.wall_s : 0.0;
  return m;
}

}  // namespace sr2
