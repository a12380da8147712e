#pragma once

#include <string>
#include <vector>

#include "sr2/engine.hpp"
#include "sr2/errors.hpp"

namespace sr2 {

// ---------------------------------------------------------------------------
// Every architecture in the comparison is expressed as a schedule over the
// same shared-block machinery: the variants differ only in how many distinct
// parameter blocks exist, where the input is injected, and where supervision
// and detachment happen. This keeps the comparison honest — one block
// implementation, one optimizer, one loss, one data path.
// ---------------------------------------------------------------------------

struct BaselineSpec {
  std::string kind = "sr2";
  SR2Config sr2;      // schedule numbers; T = m*n is the shared compute budget
  int depth = 8;      // stack depth for the multi-layer kinds
  int mixture_k = 2;  // evenly spaced reflection blocks for sr2_mixture

  void validate() const {
    sr2.validate();
    if (depth < 1) throw UsageError("baseline: depth must be >= 1");
    if (mixture_k < 1) throw UsageError("baseline: mixture k must be >= 1");
  }
};

// Accepts "sr2_mixture(4)" style names; returns the bare kind and fills k.
inline std::string parse_baseline_kind(const std::string& name, int* mixture_k) {
  const auto open = name.find('(');
  if (open == std::string::npos) return name;
  if (name.back() != ')') {
    throw UsageError("baseline: malformed kind '" + name + "'");
  }
  const std::string base = name.substr(0, open);
  const std::string arg = name.substr(open + 1, name.size() - open - 2);
  try {
    const int k = std::stoi(arg);
    if (mixture_k) *mixture_k = k;
  } catch (const std::exception&) {
    throw UsageError("baseline: non-numeric argument in kind '" + name + "'");
  }
  return base;
}

namespace detail {

inline SchedulePlan uniform_plan(int steps, int n_params,
                                 const std::vector<int>& params,
                                 const std::vector<bool>& inject,
                                 const std::vector<int>& align_after,
                                 const std::vector<int>& align_labels,
                                 const std::vector<int>& detach_after) {
  SchedulePlan plan;
  plan.n_param_blocks = n_params;
  plan.steps.resize(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    plan.steps[static_cast<std::size_t>(s)] = {params[static_cast<std::size_t>(s)],
                                               inject[static_cast<std::size_t>(s)]};
  }
  plan.align_after = align_after;
  plan.align_labels = align_labels;
  plan.detach_after = detach_after;
  plan.validate();
  return plan;
}

// Unit-structured plans: U repetitions of a unit_len-step unit, supervision
// and detachment at every unit boundary.
inline SchedulePlan unit_plan(int units, int unit_len, bool distinct_layers,
                              bool inject_every_step) {
  const int steps = units * unit_len;
  std::vector<int> params(static_cast<std::size_t>(steps), 0);
  std::vector<bool> inject(static_cast<std::size_t>(steps), false);
  std::vector<int> align, labels, det;
  for (int u = 0; u < units; ++u) {
    for (int l = 0; l < unit_len; ++l) {
      const int s = u * unit_len + l;
      if (distinct_layers) params[static_cast<std::size_t>(s)] = l;
      inject[static_cast<std::size_t>(s)] = inject_every_step || l == 0;
    }
    align.push_back((u + 1) * unit_len - 1);
    labels.push_back(u + 1);
    if (u + 1 < units) det.push_back((u + 1) * unit_len - 1);
  }
  return uniform_plan(steps, distinct_layers ? unit_len : 1, params, inject,
                      align, labels, det);
}

}  // namespace detail

// Number of distinct parameter blocks a spec instantiates.
inline int baseline_param_blocks(const BaselineSpec& spec) {
  const int T = spec.sr2.total_steps();
  if (spec.kind == "standard_transformer" || spec.kind == "reflective_model") {
    return std::min(spec.depth, T);
  }
  if (spec.kind == "sr2_separate_function") return 2;
  return 1;
}

inline SchedulePlan compile_plan(const BaselineSpec& spec) {
  spec.validate();
  const SR2Config& c = spec.sr2;
  const int T = c.total_steps();
  const std::string& kind = spec.kind;

  if (kind == "sr2") return sr2_plan(c);

  if (kind == "sr2_no_self_refinement") {
    SR2Config all = c;
    all.reflection_blocks.clear();
    for (int b = 1; b <= c.n; ++b) all.reflection_blocks.push_back(b);
    return sr2_plan(all);
  }

  if (kind == "sr2_no_reflection") {
    // input enters only at the very first iteration, not the whole first block
    SR2Config base = c;
    base.reflection_blocks = {1};
    SchedulePlan plan = sr2_plan(base);
    for (std::size_t s = 0; s < plan.steps.size(); ++s) {
      plan.steps[s].inject = (s == 0);
    }
    return plan;
  }

  if (kind == "sr2_mixture") {
    if (spec.mixture_k > c.n) {
      throw UsageError("baseline: mixture k exceeds block count");
    }
    SR2Config mix = c;
    mix.reflection_blocks.clear();
    for (int i = 0; i < spec.mixture_k; ++i) {
      const int b = (i * c.n) / spec.mixture_k + 1;  // evenly spaced, starts at 1
      if (mix.reflection_blocks.empty() || mix.reflection_blocks.back() != b) {
        mix.reflection_blocks.push_back(b);
      }
    }
    return sr2_plan(mix);
  }

  if (kind == "sr2_separate_function") {
    SchedulePlan plan = sr2_plan(c);
    plan.n_param_blocks = 2;
    std::vector<bool> reflecting(static_cast<std::size_t>(c.n) + 1, false);
    for (int b : c.reflection_blocks) reflecting[static_cast<std::size_t>(b)] = true;
    for (int s = 0; s < T; ++s) {
      const int b = s / c.m + 1;
      plan.steps[static_cast<std::size_t>(s)].param =
          reflecting[static_cast<std::size_t>(b)] ? 0 : 1;
    }
    plan.validate();
    return plan;
  }

  if (kind == "standard_transformer") {
    const int L = std::min(spec.depth, T);
    std::vector<int> params(static_cast<std::size_t>(L));
    std::vector<bool> inject(static_cast<std::size_t>(L), false);
    for (int s = 0; s < L; ++s) params[static_cast<std::size_t>(s)] = s;
    inject[0] = true;
    return detail::uniform_plan(L, L, params, inject, {L - 1}, {1}, {});
  }

  if (kind == "block_universal" || kind == "recurrent_depth") {
    const bool every = kind == "recurrent_depth";
    std::vector<int> params(static_cast<std::size_t>(T), 0);
    std::vector<bool> inject(static_cast<std::size_t>(T), every);
    inject[0] = true;
    return detail::uniform_plan(T, 1, params, inject, {T - 1}, {1}, {});
  }

  if (kind == "reflective_model" || kind == "flattened_reflective") {
    const int L = std::min(spec.depth, T);
    if (T % L != 0) {
      throw UsageError("baseline: budget " + std::to_string(T) +
                       " not divisible by unit length " + std::to_string(L));
    }
    const int units = T / L;
    if (kind == "reflective_model") {
      return detail::unit_plan(units, L, /*distinct_layers=*/true,
                               /*inject_every_step=*/false);
    }
    // flattened: the layer stack collapses to one recurrent block, which
    // keeps seeing the input at every step of the unit
    return detail::unit_plan(units, L, /*distinct_layers=*/false,
                             /*inject_every_step=*/true);
  }

  throw UsageError("baseline: unknown kind '" + kind + "'");
}

// Evaluation plan with the block/unit horizon overridden to k (the
// test-time compute knob). Only schedule-recurrent kinds have a horizon.
inline SchedulePlan eval_plan(const BaselineSpec& spec, int k_units) {
  spec.validate();
  if (k_units < 1) throw UsageError("eval: horizon must be >= 1");
  const std::string& kind = spec.kind;

  if (kind == "sr2" || kind == "sr2_no_reflection") {
    SchedulePlan plan = sr2_plan(spec.sr2, k_units, /*align_final_only=*/true);
    if (kind == "sr2_no_reflection") {
      for (std::size_t s = 0; s < plan.steps.size(); ++s) {
        plan.steps[s].inject = (s == 0);
      }
    }
    return plan;
  }
  if (kind == "sr2_no_self_refinement") {
    SR2Config all = spec.sr2;
    all.n = k_units;
    all.alignment_set.clear();
    all.reflection_blocks.clear();
    for (int b = 1; b <= k_units; ++b) all.reflection_blocks.push_back(b);
    return sr2_plan(all, k_units, true);
  }
  if (kind == "sr2_mixture" || kind == "sr2_separate_function") {
    // Reconstruct the pattern the model trained with, truncated to the
    // new horizon (re-spacing it would inject where training never did).
    std::vector<int> trained;
    if (kind == "sr2_mixture") {
      for (int i = 0; i < spec.mixture_k; ++i) {
        const int b = (i * spec.sr2.n) / spec.mixture_k + 1;
        if (trained.empty() || trained.back() != b) trained.push_back(b);
      }
    } else {
      trained = spec.sr2.reflection_blocks;
    }
    BaselineSpec shrunk = spec;
    shrunk.kind = kind == "sr2_mixture" ? "sr2" : kind;
    shrunk.sr2.n = k_units;
    shrunk.sr2.alignment_set.clear();
    shrunk.sr2.reflection_blocks.clear();
    for (int b : trained) {
      if (b <= k_units) shrunk.sr2.reflection_blocks.push_back(b);
    }
    if (shrunk.sr2.reflection_blocks.empty()) {
      shrunk.sr2.reflection_blocks = {1};
    }
    SchedulePlan plan = compile_plan(shrunk);
    // supervision only at the end for evaluation
    plan.align_after = {static_cast<int>(plan.steps.size()) - 1};
    plan.align_labels = {k_units};
    plan.validate();
    return plan;
  }
  if (kind == "reflective_model" || kind == "flattened_reflective") {
    const int T = spec.sr2.total_steps();
    const int L = std::min(spec.depth, T);
    SchedulePlan plan =
        detail::unit_plan(k_units, L, kind == "reflective_model", kind == "flattened_reflective");
    plan.align_after = {static_cast<int>(plan.steps.size()) - 1};
    plan.align_labels = {k_units};
    plan.validate();
    return plan;
  }
  throw UsageError("eval: horizon sweep undefined for kind '" + kind + "'");
}

template <class T>
Model<T> build_baseline(const BaselineSpec& spec, const ModelConfig& mc,
                        Rng& rng) {
  Model<T> model;
  model.mc = mc;
  model.plan = compile_plan(spec);
  const int n_blocks = baseline_param_blocks(spec);
  for (int i = 0; i < n_blocks; ++i) {
    model.blocks.push_back(BlockParams<T>::init(mc, rng));
  }
  model.io = IOParams<T>::init(mc, rng);
  return model;
}

// The ablation table: every row shares the base schedule and model config.
inline std::vector<BaselineSpec> ablation_suite(const BaselineSpec& base) {
  std::vector<BaselineSpec> rows;
  auto with_kind = [&](const std::string& kind, int k = 0) {
    BaselineSpec s = base;
    s.kind = kind;
    if (k > 0) s.mixture_k = k;
    rows.push_back(s);
  };
  with_kind("sr2_no_self_refinement");
  with_kind("sr2_no_reflection");
  with_kind("sr2_mixture", 2);
  with_kind("sr2_mixture", 4);
  with_kind("sr2_separate_function");
  with_kind("reflective_model");
  with_kind("flattened_reflective");
  with_kind("sr2");
  return rows;
}

}  // namespace sr2
