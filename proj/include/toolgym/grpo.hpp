#pragma once

#include <vector>

#include "toolgym/result.hpp"

namespace toolgym {

// Token log-probabilities for one agent action under the current, old and
// reference policies, plus the trajectory's broadcast advantage. Only
// agent-action tokens appear; environment tokens never enter the loss.
struct ActionTokens {
  std::vector<double> logp_current;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  double advantage = 0.0;
};

// One trajectory is its agent actions in order; a group is the M
// trajectories sharing a task.
using TrajectoryTokens = std::vector<ActionTokens>;
using GroupTokens = std::vector<TrajectoryTokens>;

struct ObjectiveParams {
  double clip_epsilon = 0.2;
  double kl_beta = 0.001;
};

// Z: total agent-action tokens across the group.
long normalization_factor(const GroupTokens& group);

// min(ratio * A, clamp(ratio, 1-eps, 1+eps) * A).
double clipped_term(double ratio, double advantage, double clip_epsilon);

// exp(d) - d - 1 with d = logp_ref - logp_current; nonnegative.
double kl_penalty(double logp_current, double logp_ref);

// J = (1/Z) sum over tokens [clipped surrogate - beta * KL penalty],
// ratios from log-prob differences.
Result<double> objective(const GroupTokens& group,
                         const ObjectiveParams& params);

// Tiny tabular softmax policy: logits[context][token], temperature 1.
// Exists so the objective's gradient path can be checked numerically.
struct ToyPolicy {
  std::vector<std::vector<double>> logits;

  size_t contexts() const { return logits.size(); }
  size_t vocab() const { return logits.empty() ? 0 : logits[0].size(); }
  std::vector<double> log_softmax(size_t context) const;
  double log_prob(size_t context, size_t token) const;
};

struct ToyStep {
  size_t context = 0;
  size_t token = 0;
};

struct ToyTrajectory {
  std::vector<ToyStep> steps;
  double advantage = 0.0;
};

// Token records for the toy trajectories under the three policies; one
// action per trajectory since the grouping does not change the sum.
Result<GroupTokens> toy_group(const ToyPolicy& current,
                              const ToyPolicy& old_policy,
                              const ToyPolicy& reference,
                              const std::vector<ToyTrajectory>& trajectories);

Result<double> toy_objective(const ToyPolicy& current,
                             const ToyPolicy& old_policy,
                             const ToyPolicy& reference,
                             const std::vector<ToyTrajectory>& trajectories,
                             const ObjectiveParams& params);

// dJ / d logits of the current policy, same shape as ToyPolicy::logits.
// At a clip boundary the unclipped side's slope is used.
Result<std::vector<std::vector<double>>> analytic_gradient(
    const ToyPolicy& current, const ToyPolicy& old_policy,
    const ToyPolicy& reference, const std::vector<ToyTrajectory>& trajectories,
    const ObjectiveParams& params);

// Max relative error between the analytic gradient and central finite
// differences with h = 1e-5.
Result<double> gradient_check(const ToyPolicy& current,
                              const ToyPolicy& old_policy,
                              const ToyPolicy& reference,
                              const std::vector<ToyTrajectory>& trajectories,
                              const ObjectiveParams& params);

}  // namespace toolgym
