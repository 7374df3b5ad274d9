"""Distributed equilibrium seeking with consensus-tracked aggregates.

Every agent interleaves two moves: a damped projected-gradient step on
its own cost, evaluated at a *local estimate* of the aggregate, and one
perturbed-consensus update of the tracker that maintains this estimate.
The module also carries the diagnostics that make the scheme auditable:

- a fixed orthonormal basis for the consensus-orthogonal (disagreement)
  coordinates of the tracker stack,
- a probe that freezes the strategies and watches the tracker subsystem
  contract to its equilibrium at the spectral rate of the weights,
- a centralized reference iteration fed the exact aggregate, which the
  tracker-driven iteration must reproduce bit for bit when the trackers
  are overwritten by their exact values each step,
- a diminishing-stepsize baseline for benchmarking plots.

All x-updates funnel through one helper so the distributed and the
centralized routes share their floating-point summation order.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteDetected
from .games import StrategyProfile, local_operator, phi_stack
from .network import consensus_step, spectrum

TRACKER_MODES = ("consensus", "exact", "exact_recomposed")

_FIT_FLOOR = 1e-12
_FIT_MIN_SKIP = 50
_FIT_SKIP_FRACTION = 0.05


# ------------------------------------------------------------ configuration


@dataclass(frozen=True)
class TradesConfig:
    """Run parameters: stepsize, damping, stopping rule, trace cadence.

    delta is the convex-combination weight of the projected step; the
    nominal range is (0, 1) but the closed boundary delta = 1 is accepted
    because the undamped iteration is a meaningful degenerate case (it is
    exactly the baseline update).  stop_tol applies to the damping
    normalized step norm ||x_next - x|| / delta.
    """

    gamma: float = 0.01
    delta: float = 0.5
    stop_tol: float = 1e-10
    max_iter: int = 50000
    trace_stride: int = 1
    seed: int = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.stop_tol > 0:
            raise ValueError(f"stop_tol must be > 0, got {self.stop_tol}")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if int(self.trace_stride) < 1:
            raise ValueError("trace_stride must be at least 1")


@dataclass
class TradesState:
    """Iterate: strategy profile, tracker stack (one row per agent), time."""

    x: StrategyProfile
    z: np.ndarray
    t: int = 0


# ------------------------------------------------------- disagreement basis


class ConsensusBasis:
    """Orthonormal basis of the subspace orthogonal to agreement.

    matrix has shape (N, N-1); its columns are orthonormal, each sums to
    zero, and matrix @ matrix.T = I - ones/N.  Built from the Householder
    reflection that maps the first coordinate axis onto the normalized
    all-ones vector, so the basis is deterministic for each N.
    """

    def __init__(self, n_agents):
        n = int(n_agents)
        if n < 1:
            raise ValueError("need at least one agent")
        if n == 1:
            matrix = np.zeros((1, 0))
        else:
            e1 = np.zeros(n)
            e1[0] = 1.0
            u = e1 - np.full(n, 1.0 / math.sqrt(n))
            h = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
            matrix = h[:, 1:]
        self.n_agents = n
        self.matrix = matrix

    def to_disagreement(self, stack):
        """Coordinates of an (N, d) stack in the disagreement basis."""
        return self.matrix.T @ np.asarray(stack, dtype=float)

    def from_disagreement(self, coords):
        """Lift (N-1, d) disagreement coordinates back to an (N, d) stack."""
        return self.matrix @ np.asarray(coords, dtype=float)


_BASIS_CACHE = {}


def consensus_basis(n_agents):
    """Shared per-N basis instance; identical object across calls."""
    basis = _BASIS_CACHE.get(n_agents)
    if basis is None:
        basis = ConsensusBasis(n_agents)
        _BASIS_CACHE[n_agents] = basis
    return basis


def decompose_tracker(z):
    """Split a tracker stack into mean and disagreement coordinates.

    Returns (mean over agents as a d-vector, disagreement coordinates
    flattened to length (N-1)*d, basis handle).  The stack is recovered
    as ones*mean + basis.from_disagreement(coords reshaped (N-1, d)).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("tracker stack must be a 2-d array (agents, d)")
    basis = consensus_basis(z.shape[0])
    z_bar = z.mean(axis=0)
    z_perp = basis.to_disagreement(z)
    return z_bar, z_perp.ravel(), basis


# ------------------------------------------------------------------- traces


TRACE_COLUMNS = ("t", "err_x", "est_err_max", "disagreement", "step_norm")


@dataclass
class IterationTrace:
    """Recorded rows of a run.

    The CSV columns are t, err_x (distance to the supplied equilibrium,
    nan when none was given), est_err_max (worst per-agent aggregate
    estimation error), disagreement (norm of the tracker stack's
    disagreement coordinates relative to their frozen-strategy target),
    and step_norm (damping-normalized step out of the recorded state;
    the final row repeats the arriving step, which is the stopping
    residual).  z_mean_residual and feas_residual are extra in-memory
    columns used by invariant checks, not written to CSV.
    """

    t: np.ndarray
    err_x: np.ndarray
    est_err_max: np.ndarray
    disagreement: np.ndarray
    step_norm: np.ndarray
    z_mean_residual: np.ndarray
    feas_residual: np.ndarray
    iterates: np.ndarray = None

    def __len__(self):
        return len(self.t)

    def csv_text(self):
        lines = [",".join(TRACE_COLUMNS)]
        for k in range(len(self.t)):
            row = (repr(int(self.t[k])),
                   repr(float(self.err_x[k])),
                   repr(float(self.est_err_max[k])),
                   repr(float(self.disagreement[k])),
                   repr(float(self.step_norm[k])))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.csv_text())


@dataclass
class ConvergenceReport:
    """Fitted linear-rate summary of a completed run.

    a1, a2 come from least squares on log(err) vs t over the
    post-transient window: err is modeled as a1 * exp(-a2 * t).  The
    verdict is PASS only when the fitted decay rate a2 is positive.
    contraction_ratio is the median per-iteration error ratio over the
    fit window, an empirical counterpart to exp(-a2).
    """

    a1: float = None
    a2: float = None
    r_squared: float = None
    contraction_ratio: float = None
    n_fit_points: int = 0
    iterations: int = 0
    stop_reason: str = "max_iter"
    converged: bool = False

    @property
    def verdict(self):
        if self.a2 is None:
            return "N/A"
        return "PASS" if self.a2 > 0 else "FAIL"

    def as_dict(self):
        return {
            "a1": self.a1,
            "a2": self.a2,
            "r_squared": self.r_squared,
            "contraction_ratio": self.contraction_ratio,
            "n_fit_points": self.n_fit_points,
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "converged": self.converged,
            "verdict": self.verdict,
        }


def fit_convergence(ts, errs, total_iterations):
    """Least-squares linear fit of log(err) against iteration index.

    Discards the transient (t below max(50, 5% of the run)) and samples
    at or below the floating-point floor of 1e-12.  Returns a tuple
    (a1, a2, r_squared, contraction_ratio, n_points); the first four are
    None when fewer than three samples survive.
    """
    ts = np.asarray(ts, dtype=float)
    errs = np.asarray(errs, dtype=float)
    cut = max(_FIT_MIN_SKIP, _FIT_SKIP_FRACTION * total_iterations)
    mask = (ts >= cut) & np.isfinite(errs) & (errs > _FIT_FLOOR)
    n_points = int(mask.sum())
    if n_points < 3:
        return None, None, None, None, n_points
    tw = ts[mask]
    logs = np.log(errs[mask])
    slope, intercept = np.polyfit(tw, logs, 1)
    pred = intercept + slope * tw
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    gaps = np.diff(tw)
    ratios = (errs[mask][1:] / errs[mask][:-1]) ** (1.0 / gaps)
    ratio = float(np.median(ratios)) if ratios.size else None
    return float(np.exp(intercept)), float(-slope), float(r2), ratio, n_points


# ------------------------------------------------------------ the iteration


def exact_tracker_values(game, blocks):
    """Tracker stack that makes every local estimate equal the aggregate."""
    phix = phi_stack(game, blocks)
    return phix.mean(axis=0)[None, :] - phix


def init(game, x0):
    """Build the starting state from a profile, stacked vector, or seed.

    The strategy part is projected componentwise so the feasibility
    invariant holds from t = 0; the tracker stack starts at exactly zero,
    which pins its per-column mean to zero for the whole run.
    """
    if isinstance(x0, (int, np.integer)):
        rng = np.random.default_rng(int(x0))
        blocks = [rng.standard_normal(dim) for dim in game.dims]
    else:
        blocks = game.as_blocks(x0)
    projected = game.project(blocks)
    return TradesState(x=StrategyProfile(projected),
                       z=np.zeros((game.N, game.d)), t=0)


def _damped_projected_step(game, blocks, estimates, gamma, delta):
    """x_i + delta * (P_i[x_i - gamma * direction_i] - x_i) for every agent.

    The single funnel for strategy updates: distributed, exact-tracker
    and centralized runs all pass through here, so equal inputs give
    bitwise equal outputs.
    """
    new_blocks = []
    for i, agent in enumerate(game.agents):
        x_i = blocks[i]
        v = x_i - gamma * local_operator(game, i, x_i, estimates[i])
        p = agent.projector(v)
        new_blocks.append(x_i + delta * (p - x_i))
    return new_blocks


def _advance(game, graph, gamma, delta, blocks, z, tracker_mode):
    """One synchronous sweep; returns (new blocks, new z, contributions).

    Both halves read the time-t state: the strategy update uses the
    time-t tracker, and the tracker update uses the time-t contributions
    (never the freshly updated strategies).
    """
    phix = phi_stack(game, blocks)
    if tracker_mode == "consensus":
        estimates = [phix[i] + z[i] for i in range(game.N)]
        new_blocks = _damped_projected_step(game, blocks, estimates, gamma, delta)
        new_z = consensus_step(graph, z, phix)
    elif tracker_mode == "exact":
        sigma = phix.mean(axis=0)
        estimates = [sigma] * game.N
        new_blocks = _damped_projected_step(game, blocks, estimates, gamma, delta)
        new_z = exact_tracker_values(game, new_blocks)
    elif tracker_mode == "exact_recomposed":
        sigma = phix.mean(axis=0)
        estimates = [phix[i] + (sigma - phix[i]) for i in range(game.N)]
        new_blocks = _damped_projected_step(game, blocks, estimates, gamma, delta)
        new_z = exact_tracker_values(game, new_blocks)
    else:
        raise ValueError(f"unknown tracker_mode {tracker_mode!r}; "
                         f"expected one of {TRACKER_MODES}")
    return new_blocks, new_z, phix


def step(game, graph, cfg, state, tracker_mode="consensus"):
    """Advance one iteration and return the new state.

    Raises NonFiniteDetected, tagged with the produced iteration index,
    as soon as any strategy or tracker coordinate stops being finite.
    """
    z = np.asarray(state.z, dtype=float)
    if z.shape != (game.N, game.d):
        raise ValueError(f"tracker stack must have shape ({game.N}, {game.d})")
    blocks = game.as_blocks(state.x)
    new_blocks, new_z, _ = _advance(game, graph, cfg.gamma, cfg.delta,
                                    blocks, z, tracker_mode)
    t_next = state.t + 1
    if not all(np.all(np.isfinite(b)) for b in new_blocks) \
            or not np.all(np.isfinite(new_z)):
        raise NonFiniteDetected(t_next, "non-finite strategy or tracker value")
    return TradesState(x=StrategyProfile(new_blocks), z=new_z, t=t_next)


def _oracle_vector(game, oracle):
    if oracle is None:
        return None
    if isinstance(oracle, StrategyProfile):
        return oracle.stacked
    vec = np.asarray(oracle, dtype=float).reshape(-1)
    if vec.size != game.n:
        raise ValueError(f"equilibrium reference has length {vec.size}, "
                         f"expected {game.n}")
    return vec


class _Recorder:
    """Accumulates trace rows; one call per recorded iterate."""

    def __init__(self, game, oracle_vec):
        self.game = game
        self.oracle_vec = oracle_vec
        self.basis = consensus_basis(game.N)
        self.rows = {name: [] for name in
                     ("t", "err_x", "est_err_max", "disagreement",
                      "step_norm", "z_mean_residual", "feas_residual")}

    def add(self, t, blocks, z, phix, step_norm):
        sigma = phix.mean(axis=0)
        est = float(np.max(np.linalg.norm(phix + z - sigma[None, :], axis=1)))
        disagreement = float(np.linalg.norm(self.basis.to_disagreement(z + phix)))
        z_norm = float(np.linalg.norm(z))
        z_mean = float(np.linalg.norm(z.sum(axis=0))) / max(1.0, z_norm)
        feas = max(agent.projector.membership_residual(b)
                   for agent, b in zip(self.game.agents, blocks))
        if self.oracle_vec is None:
            err = float("nan")
        else:
            err = float(np.linalg.norm(np.concatenate(blocks) - self.oracle_vec))
        r = self.rows
        r["t"].append(t)
        r["err_x"].append(err)
        r["est_err_max"].append(est)
        r["disagreement"].append(disagreement)
        r["step_norm"].append(step_norm)
        r["z_mean_residual"].append(z_mean)
        r["feas_residual"].append(float(feas))

    def build(self, iterates=None):
        arrays = {name: np.asarray(vals) for name, vals in self.rows.items()}
        return IterationTrace(iterates=iterates, **arrays)


def run(game, graph, cfg, x0=None, oracle=None, tracker_mode="consensus",
        keep_iterates=False):
    """Iterate to the stopping tolerance and instrument the trajectory.

    x0 may be a profile, a stacked vector, or an integer seed; when it is
    None the seed from cfg is used.  oracle, when given, is the reference
    equilibrium used to fill the error column and fit the linear rate.
    Returns (final state, trace, report).  Exhausting max_iter is an
    outcome recorded in the report, not an exception; only non-finite
    values raise.
    """
    if tracker_mode not in TRACKER_MODES:
        raise ValueError(f"unknown tracker_mode {tracker_mode!r}; "
                         f"expected one of {TRACKER_MODES}")
    if x0 is None:
        if cfg.seed is None:
            raise ValueError("run needs x0 or a seed in the configuration")
        x0 = int(cfg.seed)
    state = init(game, x0)
    oracle_vec = _oracle_vector(game, oracle)
    recorder = _Recorder(game, oracle_vec)
    iterates = [np.concatenate(state.x.blocks)] if keep_iterates else None

    blocks = state.x.blocks
    z = state.z
    stop_reason = "max_iter"
    step_norm = float("nan")
    t = 0
    while t < cfg.max_iter:
        new_blocks, new_z, phix = _advance(game, graph, cfg.gamma, cfg.delta,
                                           blocks, z, tracker_mode)
        if not all(np.all(np.isfinite(b)) for b in new_blocks) \
                or not np.all(np.isfinite(new_z)):
            raise NonFiniteDetected(t + 1, "non-finite strategy or tracker value",
                                    trace=recorder.build(None))
        delta_vec = np.concatenate(new_blocks) - np.concatenate(blocks)
        step_norm = float(np.linalg.norm(delta_vec)) / cfg.delta
        if t % cfg.trace_stride == 0:
            recorder.add(t, blocks, z, phix, step_norm)
        blocks, z = new_blocks, new_z
        t += 1
        if keep_iterates:
            iterates.append(np.concatenate(blocks))
        if step_norm <= cfg.stop_tol:
            stop_reason = "stop_tol"
            break

    final_phix = phi_stack(game, blocks)
    recorder.add(t, blocks, z, final_phix, step_norm)
    trace = recorder.build(np.asarray(iterates) if keep_iterates else None)

    if oracle_vec is not None:
        a1, a2, r2, ratio, n_fit = fit_convergence(trace.t, trace.err_x, t)
    else:
        a1 = a2 = r2 = ratio = None
        n_fit = 0
    report = ConvergenceReport(a1=a1, a2=a2, r_squared=r2,
                               contraction_ratio=ratio, n_fit_points=n_fit,
                               iterations=t, stop_reason=stop_reason,
                               converged=(stop_reason == "stop_tol"))
    state = TradesState(x=StrategyProfile(blocks), z=z, t=t)
    return state, trace, report


def reduced_system_run(game, cfg, x0):
    """Centralized reference: damped projected steps on the exact aggregate.

    Returns the trajectory of stacked iterates, shape (steps + 1, n),
    first row the projected start.  Shares the strategy-update funnel
    with run, so a run in tracker_mode="exact" with the same
    configuration and start reproduces this trajectory bitwise.
    """
    state = init(game, x0)
    blocks = state.x.blocks
    trajectory = [np.concatenate(blocks)]
    for t in range(cfg.max_iter):
        phix = phi_stack(game, blocks)
        sigma = phix.mean(axis=0)
        new_blocks = _damped_projected_step(game, blocks, [sigma] * game.N,
                                            cfg.gamma, cfg.delta)
        if not all(np.all(np.isfinite(b)) for b in new_blocks):
            raise NonFiniteDetected(t + 1, "non-finite strategy value")
        step_norm = float(np.linalg.norm(np.concatenate(new_blocks)
                                         - np.concatenate(blocks))) / cfg.delta
        blocks = new_blocks
        trajectory.append(np.concatenate(blocks))
        if step_norm <= cfg.stop_tol:
            break
    return np.asarray(trajectory)


# --------------------------------------------------- boundary-layer probing


def boundary_layer_budget(rho):
    """Steps after which a geometric decay at rate rho shrinks by 1e-10.

    Reads the ten-over-log rule in base 10: rho to this power is at most
    1e-10.  A nonpositive rate converges in one sweep.
    """
    rho = float(rho)
    if not 0 <= rho < 1:
        raise ValueError(f"spectral rate must lie in [0, 1), got {rho}")
    if rho == 0.0:
        return 1
    return int(math.ceil(10.0 / math.log10(1.0 / rho)))


@dataclass
class BoundaryLayerResult:
    """Frozen-strategy tracker transient.

    errors[k] is the distance of the disagreement coordinates from their
    frozen-strategy target after k sweeps; ratios are consecutive error
    quotients (nan once the error underflows the measurement floor);
    final_gap_max is the worst per-agent distance of the tracker from
    the estimate it is meant to reach.
    """

    errors: np.ndarray
    ratios: np.ndarray
    final_gap_max: float
    steps: int
    rho: float


def boundary_layer_probe(graph, game, x, steps=None):
    """Freeze the strategies and watch the tracker subsystem settle.

    With x frozen the tracker dynamics are linear; their equilibrium
    makes every agent's estimate equal the true aggregate.  The default
    step budget comes from boundary_layer_budget at the measured
    spectral rate of the weights.
    """
    blocks = game.as_blocks(x)
    phix = phi_stack(game, blocks)
    sigma = phix.mean(axis=0)
    basis = consensus_basis(game.N)
    target = -basis.to_disagreement(phix)
    rho = spectrum(graph).rho_disagreement
    if steps is None:
        steps = boundary_layer_budget(rho)
    z = np.zeros((game.N, game.d))
    errors = [float(np.linalg.norm(basis.to_disagreement(z) - target))]
    for _ in range(int(steps)):
        z = consensus_step(graph, z, phix)
        errors.append(float(np.linalg.norm(basis.to_disagreement(z) - target)))
    errors = np.asarray(errors)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(errors[:-1] > _FIT_FLOOR,
                          errors[1:] / np.where(errors[:-1] > 0, errors[:-1], 1.0),
                          np.nan)
    final_gap = float(np.max(np.linalg.norm(z + phix - sigma[None, :], axis=1)))
    return BoundaryLayerResult(errors=errors, ratios=ratios,
                               final_gap_max=final_gap, steps=int(steps),
                               rho=float(rho))


# ------------------------------------------------------------------ baseline


@dataclass(frozen=True)
class DiminishingSchedule:
    """Stepsize sequence gamma0 / (1 + t) ** exponent.

    The exponent window (1/2, 1] keeps the sequence square-summable but
    not summable, the classic requirement for diminishing-step schemes;
    gamma0 / t**2 style schedules (exponent 2) are rejected here at
    declaration time because their sum is finite.
    """

    gamma0: float
    exponent: float = 0.6

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be > 0, got {self.gamma0}")
        if not 0.5 < self.exponent <= 1.0:
            raise ValueError(
                f"exponent must lie in (0.5, 1], got {self.exponent}: "
                "the step sum must diverge while the squared sum stays finite")

    def __call__(self, t):
        return self.gamma0 / (1.0 + t) ** self.exponent


def baseline_diminishing(game, graph, schedule, x0, max_iter=2000,
                         stop_tol=None, oracle=None, trace_stride=1):
    """Undamped consensus-tracked iteration with a per-step stepsize.

    schedule is a DiminishingSchedule (validated) or any callable
    t -> stepsize supplied at the caller's responsibility, which also
    admits degenerate constant schedules for comparison runs.  Returns
    (final state, trace); meant for benchmarking plots, so there is no
    rate fit and by default no early stop.
    """
    if not callable(schedule):
        raise TypeError("schedule must be callable")
    state = init(game, x0)
    blocks = state.x.blocks
    z = state.z
    recorder = _Recorder(game, _oracle_vector(game, oracle))
    step_norm = float("nan")
    t = 0
    while t < int(max_iter):
        gamma_t = float(schedule(t))
        if not gamma_t > 0:
            raise ValueError(f"schedule produced stepsize {gamma_t} at t={t}")
        new_blocks, new_z, phix = _advance(game, graph, gamma_t, 1.0,
                                           blocks, z, "consensus")
        if not all(np.all(np.isfinite(b)) for b in new_blocks) \
                or not np.all(np.isfinite(new_z)):
            raise NonFiniteDetected(t + 1, "non-finite strategy or tracker value")
        step_norm = float(np.linalg.norm(np.concatenate(new_blocks)
                                         - np.concatenate(blocks)))
        if t % int(trace_stride) == 0:
            recorder.add(t, blocks, z, phix, step_norm)
        blocks, z = new_blocks, new_z
        t += 1
        if stop_tol is not None and step_norm <= stop_tol:
            break
    recorder.add(t, blocks, z, phi_stack(game, blocks), step_norm)
    return TradesState(x=StrategyProfile(blocks), z=z, t=t), recorder.build()
