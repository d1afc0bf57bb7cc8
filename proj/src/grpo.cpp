#include "toolgym/grpo.hpp"

#include <algorithm>
#include <cmath>

namespace toolgym {

long normalization_factor(const GroupTokens& group) {
  long z = 0;
  for (const TrajectoryTokens& trajectory : group) {
    for (const ActionTokens& action : trajectory) {
      z += static_cast<long>(action.logp_current.size());
    }
  }
  return z;
}

double clipped_term(double ratio, double advantage, double clip_epsilon) {
  double clamped =
      std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clamped * advantage);
}

double kl_penalty(double logp_current, double logp_ref) {
  double d = logp_ref - logp_current;
  return std::exp(d) - d - 1.0;
}

namespace {

VoidResult validate_group(const GroupTokens& group) {
  if (group.empty()) {
    return make_error(ErrorKind::invalid_input, "empty trajectory group");
  }
  for (const TrajectoryTokens& trajectory : group) {
    for (const ActionTokens& action : trajectory) {
      size_t n = action.logp_current.size();
      if (n == 0) {
        return make_error(ErrorKind::invalid_input,
                          "action with zero tokens");
      }
      if (action.logp_old.size() != n || action.logp_ref.size() != n) {
        return make_error(ErrorKind::invalid_input,
                          "log-prob lists differ in length");
      }
    }
  }
  return Unit{};
}

}  // namespace

Result<double> objective(const GroupTokens& group,
                         const ObjectiveParams& params) {
  auto valid = validate_group(group);
  if (!valid.ok()) {
    return valid.error();
  }
  long z = normalization_factor(group);
  if (z == 0) {
    return make_error(ErrorKind::invalid_input,
                      "normalization factor is zero");
  }
  double sum = 0.0;
  for (const TrajectoryTokens& trajectory : group) {
    for (const ActionTokens& action : trajectory) {
      for (size_t j = 0; j < action.logp_current.size(); ++j) {
        double ratio = std::exp(action.logp_current[j] - action.logp_old[j]);
        sum += clipped_term(ratio, action.advantage, params.clip_epsilon);
        sum -= params.kl_beta *
               kl_penalty(action.logp_current[j], action.logp_ref[j]);
      }
    }
  }
  return sum / static_cast<double>(z);
}

std::vector<double> ToyPolicy::log_softmax(size_t context) const {
  const std::vector<double>& row = logits[context];
  double max_logit = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) {
    sum += std::exp(v - max_logit);
  }
  double log_z = max_logit + std::log(sum);
  std::vector<double> out(row.size());
  for (size_t i = 0; i < row.size(); ++i) {
    out[i] = row[i] - log_z;
  }
  return out;
}

double ToyPolicy::log_prob(size_t context, size_t token) const {
  return log_softmax(context)[token];
}

namespace {

VoidResult validate_toy(const ToyPolicy& current, const ToyPolicy& old_policy,
                        const ToyPolicy& reference,
                        const std::vector<ToyTrajectory>& trajectories) {
  size_t contexts = current.contexts();
  size_t vocab = current.vocab();
  if (contexts == 0 || vocab < 2) {
    return make_error(ErrorKind::invalid_input,
                      "toy policy needs at least one context and two tokens");
  }
  for (const auto& row : current.logits) {
    if (row.size() != vocab) {
      return make_error(ErrorKind::invalid_input, "ragged logits table");
    }
  }
  for (const ToyPolicy* policy : {&old_policy, &reference}) {
    if (policy->contexts() != contexts || policy->vocab() != vocab) {
      return make_error(ErrorKind::invalid_input,
                        "policies differ in shape");
    }
  }
  if (trajectories.empty()) {
    return make_error(ErrorKind::invalid_input, "no toy trajectories");
  }
  for (const ToyTrajectory& trajectory : trajectories) {
    if (trajectory.steps.empty()) {
      return make_error(ErrorKind::invalid_input, "empty toy trajectory");
    }
    for (const ToyStep& step : trajectory.steps) {
      if (step.context >= contexts || step.token >= vocab) {
        return make_error(ErrorKind::invalid_input,
                          "toy step indexes outside the policy table");
      }
    }
  }
  return Unit{};
}

}  // namespace

Result<GroupTokens> toy_group(const ToyPolicy& current,
                              const ToyPolicy& old_policy,
                              const ToyPolicy& reference,
                              const std::vector<ToyTrajectory>& trajectories) {
  auto valid = validate_toy(current, old_policy, reference, trajectories);
  if (!valid.ok()) {
    return valid.error();
  }
  GroupTokens group;
  group.reserve(trajectories.size());
  for (const ToyTrajectory& trajectory : trajectories) {
    ActionTokens action;
    action.advantage = trajectory.advantage;
    for (const ToyStep& step : trajectory.steps) {
      action.logp_current.push_back(current.log_prob(step.context, step.token));
      action.logp_old.push_back(old_policy.log_prob(step.context, step.token));
      action.logp_ref.push_back(reference.log_prob(step.context, step.token));
    }
    group.push_back({std::move(action)});
  }
  return group;
}

Result<double> toy_objective(const ToyPolicy& current,
                             const ToyPolicy& old_policy,
                             const ToyPolicy& reference,
                             const std::vector<ToyTrajectory>& trajectories,
                             const ObjectiveParams& params) {
  auto group = toy_group(current, old_policy, reference, trajectories);
  if (!group.ok()) {
    return group.error();
  }
  return objective(group.value(), params);
}

Result<std::vector<std::vector<double>>> analytic_gradient(
    const ToyPolicy& current, const ToyPolicy& old_policy,
    const ToyPolicy& reference, const std::vector<ToyTrajectory>& trajectories,
    const ObjectiveParams& params) {
  auto valid = validate_toy(current, old_policy, reference, trajectories);
  if (!valid.ok()) {
    return valid.error();
  }
  size_t contexts = current.contexts();
  size_t vocab = current.vocab();
  std::vector<std::vector<double>> grad(contexts,
                                        std::vector<double>(vocab, 0.0));
  long z = 0;
  for (const ToyTrajectory& trajectory : trajectories) {
    z += static_cast<long>(trajectory.steps.size());
  }

  std::vector<std::vector<double>> log_probs(contexts);
  for (size_t c = 0; c < contexts; ++c) {
    log_probs[c] = current.log_softmax(c);
  }

  for (const ToyTrajectory& trajectory : trajectories) {
    for (const ToyStep& step : trajectory.steps) {
      double lc = log_probs[step.context][step.token];
      double lo = old_policy.log_prob(step.context, step.token);
      double lr = reference.log_prob(step.context, step.token);
      double ratio = std::exp(lc - lo);
      double a = trajectory.advantage;
      // Outside the clip band the surrogate is flat in the ratio.
      bool clipped = (a > 0.0 && ratio > 1.0 + params.clip_epsilon) ||
                     (a < 0.0 && ratio < 1.0 - params.clip_epsilon);
      double g = (clipped ? 0.0 : ratio * a) -
                 params.kl_beta * (1.0 - std::exp(lr - lc));
      // d logp(token|ctx) / d logits[ctx][v] = delta(v == token) - p(v|ctx)
      for (size_t v = 0; v < vocab; ++v) {
        double indicator = (v == step.token) ? 1.0 : 0.0;
        grad[step.context][v] +=
            g * (indicator - std::exp(log_probs[step.context][v]));
      }
    }
  }
  for (auto& row : grad) {
    for (double& v : row) {
      v /= static_cast<double>(z);
    }
  }
  return grad;
}

Result<double> gradient_check(const ToyPolicy& current,
                              const ToyPolicy& old_policy,
                              const ToyPolicy& reference,
                              const std::vector<ToyTrajectory>& trajectories,
                              const ObjectiveParams& params) {
  auto analytic =
      analytic_gradient(current, old_policy, reference, trajectories, params);
  if (!analytic.ok()) {
    return analytic.error();
  }
  const double h = 1e-5;
  double max_rel_error = 0.0;
  ToyPolicy perturbed = current;
  for (size_t c = 0; c < current.contexts(); ++c) {
    for (size_t v = 0; v < current.vocab(); ++v) {
      double saved = perturbed.logits[c][v];
      perturbed.logits[c][v] = saved + h;
      auto plus =
          toy_objective(perturbed, old_policy, reference, trajectories, params);
      perturbed.logits[c][v] = saved - h;
      auto minus =
          toy_objective(perturbed, old_policy, reference, trajectories, params);
      perturbed.logits[c][v] = saved;
      if (!plus.ok()) return plus.error();
      if (!minus.ok()) return minus.error();
      double fd = (plus.value() - minus.value()) / (2.0 * h);
      double a = analytic.value()[c][v];
      double scale = std::max({std::fabs(a), std::fabs(fd), 1e-4});
      double rel = std::fabs(a - fd) / scale;
      max_rel_error = std::max(max_rel_error, rel);
    }
  }
  return max_rel_error;
}

}  // namespace toolgym
