"""Voltage-support case study on a radial distribution feeder.

A synthetic low-voltage feeder stands in for real network data: a
seeded random tree with per-line impedances, a daily baseline load
shape, and a population of electric-vehicle charging agents attached to
its buses.  The linearized branch-flow model turns power injections
into bus-voltage deviations through the classic common-path resistance
sums; those sensitivities define each agent's contribution map in an
aggregative game whose aggregate is the (scaled) voltage deviation
profile across all buses and hours.

Unit conventions, since the literature leaves them implicit:

- voltages are per-unit, 1.0 at the substation with no load;
- injections are kW / kvar, positive meaning generation; charging draws
  therefore carry negative active power;
- sensitivity matrices are divided by ``power_base_kw`` so a kW-scale
  injection moves voltages on the per-unit scale;
- the game measures the aggregate in units of ``voltage_scale`` per
  unit (so voltage_scale = 100 would mean percent).  The scale is a
  recorded config field; evaluate_voltages undoes it.

File formats (documented here because they are the public interface):
network CSV with header ``bus,parent,r,x,baseline_p`` (root row has
parent -1 and zero impedance), price CSV with header ``hour,price``,
agent CSV with header ``bus,b_ch,s_max,a_ch`` where a_ch is a 0/1
string of length T.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSpec
from .games import (
    AffineGameSpec,
    AggregationRule,
    CostOracle,
    GameAgent,
    GameDefinition,
    linear_aggregation,
)
from .projections import build_ev_projector

DEFAULT_POWER_BASE_KW = 1000.0
DEFAULT_VOLTAGE_SCALE = 2400.0
DEFAULT_INVERTER_KVA = 7.0
RECHARGE_TARGET_MAX_KWH = 40.0


# ------------------------------------------------------------ the network


@dataclass
class RadialNetwork:
    """Tree-shaped feeder; bus 0 is the substation root.

    parent[k] is the upstream bus of k (parent[0] = -1); line k connects
    bus k to parent[k] with resistance line_r[k] and reactance line_x[k]
    in per unit (entries at index 0 are unused and zero).  baseline_p
    holds each bus's nominal demand in kW, zero at the root.
    """

    parent: np.ndarray
    line_r: np.ndarray
    line_x: np.ndarray
    baseline_p: np.ndarray = None

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=int)
        n = self.parent.size
        self.line_r = np.asarray(self.line_r, dtype=float).reshape(-1)
        self.line_x = np.asarray(self.line_x, dtype=float).reshape(-1)
        if self.baseline_p is None:
            self.baseline_p = np.zeros(n)
        self.baseline_p = np.asarray(self.baseline_p, dtype=float).reshape(-1)
        if not (self.line_r.size == self.line_x.size
                == self.baseline_p.size == n):
            raise ValueError("per-bus arrays disagree on the bus count")
        if n < 2:
            raise ValueError("need at least two buses")
        if self.parent[0] != -1:
            raise ValueError("bus 0 must be the root (parent -1)")
        for k in range(1, n):
            if not 0 <= self.parent[k] < k:
                # topological order doubles as the acyclicity proof
                raise ValueError(
                    f"parent of bus {k} must be an earlier bus, "
                    f"got {self.parent[k]}")
        if np.any(self.line_r[1:] <= 0) or np.any(self.line_x[1:] <= 0):
            raise ValueError("line impedances must be positive")

    @property
    def n_buses(self):
        return self.parent.size

    def path_matrix(self):
        """Boolean (bus, line) incidence: row b marks lines on root->b."""
        n = self.n_buses
        m = np.zeros((n, n), dtype=bool)
        for b in range(1, n):
            k = b
            while k != 0:
                m[b, k] = True
                k = self.parent[k]
        return m


def build_radial_network(n_buses, seed):
    """Seeded random feeder: uniform attachment tree, log-uniform lines.

    Impedances are drawn from [0.001, 0.05] p.u.; baseline demands from
    [10, 50] kW per non-root bus.  All draws happen in a fixed order so
    a seed pins the network bitwise.
    """
    n = int(n_buses)
    if n < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    parent = np.full(n, -1, dtype=int)
    for k in range(1, n):
        parent[k] = int(rng.integers(0, k))
    lo, hi = math.log10(0.001), math.log10(0.05)
    line_r = np.concatenate([[0.0], 10.0 ** rng.uniform(lo, hi, size=n - 1)])
    line_x = np.concatenate([[0.0], 10.0 ** rng.uniform(lo, hi, size=n - 1)])
    baseline = np.concatenate([[0.0], rng.uniform(10.0, 50.0, size=n - 1)])
    return RadialNetwork(parent=parent, line_r=line_r, line_x=line_x,
                         baseline_p=baseline)


def save_network(net, path):
    lines = ["bus,parent,r,x,baseline_p"]
    for b in range(net.n_buses):
        lines.append(f"{b},{int(net.parent[b])},{float(net.line_r[b])!r},"
                     f"{float(net.line_x[b])!r},{float(net.baseline_p[b])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path):
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    if not rows or rows[0] != "bus,parent,r,x,baseline_p":
        raise ValueError("network file must start with the documented header")
    parent, r, x, base = [], [], [], []
    for k, row in enumerate(rows[1:]):
        fields = row.split(",")
        if len(fields) != 5:
            raise ValueError(f"row {k + 1}: expected 5 fields, got {len(fields)}")
        if int(fields[0]) != k:
            raise ValueError(f"row {k + 1}: buses must be listed in order")
        parent.append(int(fields[1]))
        r.append(float(fields[2]))
        x.append(float(fields[3]))
        base.append(float(fields[4]))
    return RadialNetwork(parent=parent, line_r=r, line_x=x, baseline_p=base)


# ------------------------------------------------- sensitivities and loads


@dataclass
class DistFlowModel:
    """Linearized branch-flow voltage model.

    Rmat and Xmat map kW / kvar injection vectors to per-unit voltage
    changes (the common-path impedance sums divided by power_base_kw);
    v0 is the baseline voltage trajectory, bus-major of length
    n_buses * horizon, computed from the baseline demand at unit power
    factor.
    """

    Rmat: np.ndarray
    Xmat: np.ndarray
    v0: np.ndarray
    power_base_kw: float
    horizon: int

    @property
    def n_buses(self):
        return self.Rmat.shape[0]

    @property
    def dim(self):
        return self.n_buses * self.horizon


def gen_baseline_profile(net, horizon, seed):
    """Hourly demand matrix (n_buses, horizon) in kW.

    Scales each bus's nominal demand by a smooth daily shape with an
    evening peak and a small morning shoulder, plus a seeded per-bus
    amplitude jitter.  Row 0 (the substation) stays zero.
    """
    t = np.arange(int(horizon)) + 0.5
    shape = (0.65 + 0.25 * np.sin(2 * np.pi * (t - 13.0) / 24.0)
             + 0.10 * np.sin(4 * np.pi * (t - 7.0) / 24.0))
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(0.9, 1.1, size=net.n_buses)
    load = np.outer(net.baseline_p * jitter, shape)
    load[0, :] = 0.0
    return load


def distflow_sensitivities(net, baseline_load,
                           power_base_kw=DEFAULT_POWER_BASE_KW):
    """Common-path sensitivity matrices plus the baseline voltage.

    baseline_load is a (n_buses, horizon) kW demand matrix; demand is a
    negative injection, so v0 = 1 - Rmat @ load columnwise.
    """
    baseline_load = np.asarray(baseline_load, dtype=float)
    if baseline_load.ndim != 2 or baseline_load.shape[0] != net.n_buses:
        raise ValueError("baseline load must be (n_buses, horizon)")
    if not power_base_kw > 0:
        raise ValueError("power base must be positive")
    m = net.path_matrix().astype(float)
    rmat = 2.0 * (m * net.line_r[None, :]) @ m.T / power_base_kw
    xmat = 2.0 * (m * net.line_x[None, :]) @ m.T / power_base_kw
    v0 = 1.0 - rmat @ baseline_load
    return DistFlowModel(Rmat=rmat, Xmat=xmat, v0=v0.ravel(),
                         power_base_kw=float(power_base_kw),
                         horizon=baseline_load.shape[1])


def gen_prices(horizon, seed):
    """Smooth positive daily price curve with two peaks, per kWh."""
    t = np.arange(int(horizon)) + 0.5
    rng = np.random.default_rng(seed)
    pi = (0.10 + 0.03 * np.sin(2 * np.pi * (t - 5.0) / 24.0)
          + 0.02 * np.sin(4 * np.pi * (t - 13.0) / 24.0)
          + 0.005 * rng.uniform(-1.0, 1.0, size=t.size))
    return np.maximum(pi, 0.01)


def save_prices(prices, path):
    lines = ["hour,price"]
    lines += [f"{h},{float(p)!r}" for h, p in enumerate(prices)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_prices(path):
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    if not rows or rows[0] != "hour,price":
        raise ValueError("price file must start with the documented header")
    prices = []
    for h, row in enumerate(rows[1:]):
        fields = row.split(",")
        if len(fields) != 2 or int(fields[0]) != h:
            raise ValueError(f"bad price row {h + 1}: {row!r}")
        prices.append(float(fields[1]))
    return np.asarray(prices)


# ------------------------------------------------------------- the agents


@dataclass
class EvAgentSpec:
    """One charging agent: bus, plug-in window, energy need, capacity."""

    bus: int
    plugged: np.ndarray
    target_energy: float
    s_max: float = DEFAULT_INVERTER_KVA

    def __post_init__(self):
        self.plugged = np.asarray(self.plugged)
        if not np.all((self.plugged == 0) | (self.plugged == 1)):
            raise ValueError("plug-in profile must be binary")
        self.plugged = self.plugged.astype(bool)
        if self.target_energy < 0:
            raise ValueError("recharge target must be nonnegative")
        if self.s_max * int(self.plugged.sum()) < self.target_energy:
            raise InfeasibleSpec(
                f"target {self.target_energy} kWh exceeds what "
                f"{int(self.plugged.sum())} plugged hours at "
                f"{self.s_max} kVA can deliver")

    @property
    def horizon(self):
        return self.plugged.size


def gen_agents(n_agents, net, horizon, seed, s_max=DEFAULT_INVERTER_KVA):
    """Seeded agent population.

    Buses are sampled proportionally to the network's baseline demand
    (the substation, with zero demand, is never drawn).  Plug-in windows
    are overnight biased: arrival between 17h and 22h, departure between
    6h and 9h the next morning.  Recharge targets are uniform on
    (0, 40] kWh, clipped to what the window can physically deliver.
    """
    if int(horizon) < 10:
        raise ValueError("overnight windows need a horizon of at least 10 hours")
    weights = np.asarray(net.baseline_p, dtype=float)
    total = weights.sum()
    if not total > 0:
        raise ValueError("baseline demand must be positive somewhere")
    rng = np.random.default_rng(seed)
    agents = []
    for _ in range(int(n_agents)):
        bus = int(rng.choice(net.n_buses, p=weights / total))
        arrival = int(rng.integers(17, 23))
        departure = int(rng.integers(6, 10))
        plugged = np.zeros(int(horizon), dtype=bool)
        plugged[arrival:] = True
        plugged[:departure] = True
        target = float(rng.uniform(0.0, RECHARGE_TARGET_MAX_KWH))
        target = min(target, s_max * int(plugged.sum()))
        agents.append(EvAgentSpec(bus=bus, plugged=plugged,
                                  target_energy=target, s_max=s_max))
    return agents


def save_agents(agents, path):
    lines = ["bus,b_ch,s_max,a_ch"]
    for a in agents:
        bits = "".join("1" if v else "0" for v in a.plugged)
        lines.append(f"{int(a.bus)},{float(a.target_energy)!r},"
                     f"{float(a.s_max)!r},{bits}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_agents(path):
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    if not rows or rows[0] != "bus,b_ch,s_max,a_ch":
        raise ValueError("agent file must start with the documented header")
    agents = []
    for k, row in enumerate(rows[1:]):
        fields = row.split(",")
        if len(fields) != 4:
            raise ValueError(f"bad agent row {k + 1}: {row!r}")
        bits = fields[3]
        if set(bits) - {"0", "1"}:
            raise ValueError(f"row {k + 1}: plug-in profile must be 0/1")
        agents.append(EvAgentSpec(bus=int(fields[0]),
                                  plugged=[c == "1" for c in bits],
                                  target_energy=float(fields[1]),
                                  s_max=float(fields[2])))
    return agents


# ------------------------------------------------------------- the game


@dataclass
class VoltageGameConfig:
    """Cost weights and references for the voltage-support game.

    penalty weighs the aggregate voltage deviation (dimension
    n_buses * horizon); local_weight weighs each agent's own injection
    vector (dimension 2 * horizon, active block first).  reference is
    the deviation target in scaled units; voltage_scale records the
    unit change between per-unit volts and the aggregate.
    """

    prices: np.ndarray
    penalty: np.ndarray
    local_weight: np.ndarray
    reference: np.ndarray
    voltage_scale: float = DEFAULT_VOLTAGE_SCALE
    reactive_always_on: bool = True

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float).reshape(-1)
        self.penalty = np.asarray(self.penalty, dtype=float)
        self.local_weight = np.asarray(self.local_weight, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float).reshape(-1)
        if not self.voltage_scale > 0:
            raise ValueError("voltage scale must be positive")
        horizon = self.prices.size
        if self.local_weight.shape != (2 * horizon, 2 * horizon):
            raise ValueError("local weight must be 2T x 2T")
        if self.penalty.shape != (self.reference.size, self.reference.size):
            raise ValueError("penalty must match the reference dimension")
        for name, mat in (("penalty", self.penalty),
                          ("local weight", self.local_weight)):
            if np.max(np.abs(mat - mat.T)) > 1e-12 * max(1.0, np.abs(mat).max()):
                raise ValueError(f"{name} matrix must be symmetric")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} matrix must be positive definite")

    @property
    def horizon(self):
        return self.prices.size


def default_voltage_config(model, prices,
                           voltage_scale=DEFAULT_VOLTAGE_SCALE,
                           penalty_weight=1.0, active_weight=1.0,
                           reactive_weight=10.0):
    """Reference configuration: identity-style weights, support target.

    The deviation target asks every bus to sit at 1 p.u., expressed in
    scaled units as voltage_scale * (1 - v0).  The local weight is the
    diagonal pair (active_weight, reactive_weight) repeated across the
    horizon.
    """
    prices = np.asarray(prices, dtype=float).reshape(-1)
    if prices.size != model.horizon:
        raise ValueError("price horizon does not match the model")
    t = model.horizon
    d = model.dim
    local = np.kron(np.diag([float(active_weight), float(reactive_weight)]),
                    np.eye(t))
    return VoltageGameConfig(
        prices=prices,
        penalty=float(penalty_weight) * np.eye(d),
        local_weight=local,
        reference=float(voltage_scale) * (1.0 - model.v0),
        voltage_scale=float(voltage_scale),
    )


def _contribution_matrix(model, bus, n_agents, voltage_scale):
    """Scaled contribution map of one agent: N * vscale * [rho xi] (x) I_T."""
    cols = np.column_stack([model.Rmat[:, bus], model.Xmat[:, bus]])
    return n_agents * voltage_scale * np.kron(cols, np.eye(model.horizon))


def build_voltage_game(model, agents, cfg, dykstra_tol=None):
    """Assemble the voltage-support aggregative game.

    Each agent's contribution map carries the population factor N, so
    the average aggregate equals the scaled total voltage deviation.
    The pseudo-gradient is affine; the explicit (A, b) pair is attached
    so monotonicity and Lipschitz constants come out exact.
    """
    agents = list(agents)
    n_agents = len(agents)
    if n_agents == 0:
        raise ValueError("need at least one agent")
    t = model.horizon
    d = model.dim
    if cfg.horizon != t:
        raise ValueError(f"config horizon {cfg.horizon} != model horizon {t}")
    if cfg.reference.size != d:
        raise ValueError("config reference does not match the model dimension")
    price_col = np.concatenate([cfg.prices, np.zeros(t)])
    penalty = cfg.penalty
    local_weight = cfg.local_weight
    reference = cfg.reference

    def make_cost():
        def grad_strategy(x_i, s):
            return -price_col + 2.0 * (local_weight @ x_i)

        def grad_aggregate(x_i, s):
            return 2.0 * (penalty @ (s - reference))

        def value(x_i, s):
            dev = s - reference
            return float(-price_col @ x_i + dev @ penalty @ dev
                         + x_i @ local_weight @ x_i)

        return CostOracle(grad_strategy=grad_strategy,
                          grad_aggregate=grad_aggregate, value=value)

    game_agents = []
    maps = []
    proj_kwargs = {} if dykstra_tol is None else {"dykstra_tol": dykstra_tol}
    for spec in agents:
        if not 0 <= spec.bus < model.n_buses:
            raise ValueError(f"agent bus {spec.bus} outside the network")
        if spec.horizon != t:
            raise ValueError("agent plug-in horizon does not match the model")
        phi = _contribution_matrix(model, spec.bus, n_agents,
                                   cfg.voltage_scale)
        maps.append(phi / n_agents)
        projector = build_ev_projector(
            spec.plugged, spec.target_energy, spec.s_max,
            reactive_always_on=cfg.reactive_always_on, **proj_kwargs)
        game_agents.append(GameAgent(cost=make_cost(),
                                     aggregation=linear_aggregation(phi),
                                     projector=projector))

    # exact affine structure: stacking the per-agent maps gives
    # F(x) = A x + b with A = 2 M^T H M + blockdiag(2 lwm)
    mstack = np.hstack(maps)
    hm = penalty @ mstack
    a = 2.0 * mstack.T @ hm
    for i in range(n_agents):
        sl = slice(2 * t * i, 2 * t * (i + 1))
        a[sl, sl] += 2.0 * local_weight
    b = np.tile(-price_col, n_agents) - 2.0 * (mstack.T @ (penalty @ reference))
    affine = AffineGameSpec(A=a, b=b)
    return GameDefinition(game_agents, affine=affine)


# ------------------------------------------------------------- evaluation


@dataclass
class VoltageSummary:
    """Bus voltages (p.u., bus-major over the horizon) and scores."""

    voltages: np.ndarray
    deviation_score: float = None
    base_score: float = None


def evaluate_voltages(model, agents, x, cfg=None):
    """Apply every agent's injections to the linear voltage model.

    x is the stacked strategy vector (or profile) of all agents in the
    order of ``agents``; the voltage at bus b and hour tau lands at
    index b * horizon + tau.  With a config the deviation score
    ||sigma - reference||^2 in penalty norm is attached, together with
    the do-nothing score for comparison.
    """
    agents = list(agents)
    t = model.horizon
    if hasattr(x, "blocks"):
        blocks = x.blocks
    else:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != 2 * t * len(agents):
            raise ValueError(f"strategy vector has length {x.size}, "
                             f"expected {2 * t * len(agents)}")
        blocks = [x[2 * t * i: 2 * t * (i + 1)] for i in range(len(agents))]
    if len(blocks) != len(agents):
        raise ValueError("one strategy block per agent required")
    v = model.v0.reshape(model.n_buses, t).copy()
    for spec, x_i in zip(agents, blocks):
        x_i = np.asarray(x_i, dtype=float).reshape(-1)
        if x_i.size != 2 * t:
            raise ValueError("agent strategy must have length 2T")
        v += np.outer(model.Rmat[:, spec.bus], x_i[:t])
        v += np.outer(model.Xmat[:, spec.bus], x_i[t:])
    voltages = v.ravel()
    if cfg is None:
        return VoltageSummary(voltages=voltages)
    sigma = cfg.voltage_scale * (voltages - model.v0)
    dev = sigma - cfg.reference
    score = float(dev @ cfg.penalty @ dev)
    base = float(cfg.reference @ cfg.penalty @ cfg.reference)
    return VoltageSummary(voltages=voltages, deviation_score=score,
                          base_score=base)
