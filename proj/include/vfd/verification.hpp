#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vfd/agents.hpp"
#include "vfd/envs.hpp"
#include "vfd/mixers.hpp"
#include "vfd/training.hpp"

namespace vfd {

// Joint values Q(jh, ja) for one fixed joint history, paired with the
// per-agent utility vectors they are checked against.
struct JointValueTable {
  std::vector<std::vector<double>> utilities;
  PayoffTable table;
};

struct IgmReport {
  bool holds = false;
  std::vector<std::vector<int>> joint_argmax;
  std::vector<std::vector<int>> individual_argmax_product;
  std::optional<std::vector<int>> witness;
};

std::vector<std::vector<int>> enumerate_joint_actions(
    const std::vector<int>& counts);

// Exhaustive check of Def: joint argmax set == Cartesian product of
// per-agent argmax sets; values within tol of the max are in the set.
IgmReport igm_check(const JointValueTable& table, double tol = 1e-9);

// Simplified advantage biconditional: for every joint action,
// (exists i: u_i < 0) <=> A < 0; agrees with igm_check by construction.
bool advantage_constraint_check(const JointValueTable& table,
                                double tol = 1e-9);

// Evaluates a mixer over the whole joint action space with frozen utilities.
JointValueTable mixer_table(const Mixer& mixer, const ParamStore& store,
                            const std::vector<std::vector<double>>& utilities,
                            const MixerInputs& inputs);

// Random table that satisfies IGM by construction:
// Q(ja) = w(ja) * sum_i u_i + b with w(ja) > 0.
JointValueTable random_igm_target(Rng& rng, const std::vector<int>& counts);

// --- table fitting --------------------------------------------------------

struct FitResult {
  double max_abs_error = 0.0;
  long steps_used = 0;
};

// Gradient-descends the mixer against the target table with utilities held
// fixed at the target's utilities; errors on non-IGM targets.
FitResult fit_target_table(const MixerSpec& spec,
                           const JointValueTable& target, long max_steps,
                           double lr, std::uint64_t seed);

// Exact least-squares additive decomposition Q ~ sum_i q_i(a_i), solved by
// normal equations (gauge: q_i(0) = 0 for i >= 1). Residuals are unique
// even though the decomposition itself is only unique up to shifts.
struct AdditiveFit {
  std::vector<std::vector<double>> q;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
  std::vector<int> greedy;
};

AdditiveFit best_additive_fit(const PayoffTable& target);

// --- stateful checks --------------------------------------------------------

struct StatefulIgmReport {
  bool pointwise_holds = false;  // IGM per enumerated state
  bool marginal_holds = false;   // IGM of the posterior-marginalized values
  IgmReport marginal;
};

struct RolledHistory {
  std::vector<HistoryWindow> windows;
  std::vector<std::vector<int>> guesses;  // per agent, per observation
};

// Rolls `action_steps` random non-terminal actions from a fresh episode and
// collects windows plus the per-agent state-guess sequences.
RolledHistory roll_history(LatentStateMatrixGame& env, const AgentModel& model,
                           Rng& rng, int action_steps);

// Step 1: pointwise IGM per enumerated state; Step 2: IGM of
// sum_s Pr(s|jh) Q(jh, s, ja) using the exact Bayes posterior.
StatefulIgmReport stateful_igm_check(const LatentStateMatrixGame& env,
                                     const AgentModel& model,
                                     const ParamStore& store,
                                     const Mixer& mixer,
                                     const RolledHistory& history,
                                     double tol = 1e-9);

// --- gradient checks -------------------------------------------------------

// Max |grad(Q_mixed) - grad(Q_fixee)| over agent parameters, two
// independent backward passes.
double detach_grad_gap(MixerKind kind, std::uint64_t seed, bool detach);

// History-dependent target pair with equal state posteriors: unfittable by
// state-only conditioning (structural error >= gap/2), fittable by
// history-state conditioning.
struct WitnessResult {
  double sup_state_only = 0.0;
  double sup_history_state = 0.0;
};
WitnessResult state_only_completeness_witness(std::uint64_t seed,
                                              long fit_steps, double lr);

// --- property suites ---------------------------------------------------

struct SuiteReport {
  std::string check_name;
  long instances = 0;
  long failures = 0;
  bool passed = false;
  std::string detail;
  std::vector<std::string> witnesses;  // capped
};

struct SuiteOptions {
  int threads = 2;
  std::uint64_t seed = 20250607;
};

SuiteReport suite_igm(int per_combo, const SuiteOptions& opts);
SuiteReport suite_prop2(int tables, int near_tie, const SuiteOptions& opts);
SuiteReport suite_stateful(int per_combo, const SuiteOptions& opts);
// Detach on: gradients equal within 1e-10. Detach off: gradients differ on
// at least `differ_pct` percent of instances.
SuiteReport suite_detach_identity(int instances, const SuiteOptions& opts);
SuiteReport suite_detach_off_differs(int instances, double differ_pct,
                                     const SuiteOptions& opts);
// Central finite differences on every parametric mixer kind and the utility
// network (h = 1e-5, rel err < 1e-4); kink-adjacent coordinates resampled.
SuiteReport suite_grad(int per_component, const SuiteOptions& opts);
SuiteReport suite_completeness(int targets, long fit_steps, double pass_pct,
                               const SuiteOptions& opts);
SuiteReport suite_state_only_witness(int targets, int min_reproduced,
                                     long fit_steps, const SuiteOptions& opts);

// Named groups for the verify CLI: igm, stateful, detach, grad,
// completeness, all.
std::vector<SuiteReport> run_suites(const std::string& which,
                                    const SuiteOptions& opts);

}  // namespace vfd
