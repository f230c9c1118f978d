"""Continuous-time Ising path integral for the spin-boson model.

Paths are +-1 trajectories of a rate-1 flip process on [0, T]. The action of a
path X is

    S[X] = c lambda^2 int_0^T int_0^T W(t - s) X_t X_s dt ds - mu int_0^T X_t dt

with the kernel W of utils.kernel. With the field operator phi(v) = a(v) + a(v)^*
used by utils.fock, integrating out the boson field gives c = 2 (PAIR_FACTOR),
which makes Z_T = E[exp S] equal to exp(-T) <Omega_down, exp(-T H) Omega_down>.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import kernel as kernel_mod
from .errors import ArgumentError, ConfigurationError, EstimationError, SpinBosonError, TruncationError
from .estimate import Estimate, combine
from .streams import CHAIN_STREAMS, PARTITION_STREAMS, derive_seed, stream

log = logging.getLogger(__name__)

PAIR_FACTOR = 2.0
HEAVY_TAIL_FRACTION = 0.05
ACCEPTANCE_BOUNDS = (0.05, 0.95)
BRUTE_FORCE_MAX_T = 2.0
BRUTE_FORCE_MAX_CAP = 8
BRUTE_FORCE_TOL = 1e-3


@dataclass(frozen=True)
class SpinPath:
    """X_t = initial_spin * (-1)^#{jumps <= t} on [0, horizon]."""

    horizon: float
    initial_spin: int
    jumps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        if not self.horizon > 0.0:
            raise ArgumentError(f"horizon must be positive, got {self.horizon}")
        if self.initial_spin not in (-1, 1):
            raise ArgumentError(f"initial spin must be +1 or -1, got {self.initial_spin}")
        if jumps.size and (jumps[0] <= 0.0 or jumps[-1] >= self.horizon or np.any(np.diff(jumps) <= 0.0)):
            raise ArgumentError("jump times must be strictly increasing inside (0, T)")
        jumps.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "initial_spin", int(self.initial_spin))

    @property
    def n_jumps(self):
        return int(self.jumps.size)

    @property
    def boundaries(self):
        return np.concatenate([[0.0], self.jumps, [self.horizon]])

    @property
    def spins(self):
        """Spin on each of the n_jumps + 1 segments."""
        return _alternating(self.n_jumps + 1) * self.initial_spin

    @property
    def final_spin(self):
        return self.initial_spin * (-1) ** self.n_jumps

    def value_at(self, t):
        count = np.searchsorted(self.jumps, t, side="right")
        return self.initial_spin * (1 - 2 * (np.asarray(count) % 2))

    def flipped(self):
        return SpinPath(self.horizon, -self.initial_spin, self.jumps)


def _alternating(n):
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


def sample_free_path(T, rng):
    """Uniform initial spin, Poisson(T) jumps at sorted uniform times."""
    if not T > 0.0:
        raise ArgumentError(f"T must be positive, got {T}")
    x0 = 1 if rng.integers(0, 2) else -1
    jumps = np.sort(rng.uniform(0.0, T, rng.poisson(T)))
    return SpinPath(T, x0, jumps)


def magnetization(path):
    """M = int_0^T X_t dt."""
    return float(np.diff(path.boundaries) @ path.spins)


def segment_matrix(table, boundaries):
    """K_ij = int over segment i x segment j of W(t - s), from V at all boundary differences."""
    tau = np.asarray(boundaries, dtype=float)
    D = table.V(tau[..., :, None] - tau[..., None, :])
    return D[..., 1:, :-1] - D[..., :-1, :-1] - D[..., 1:, 1:] + D[..., :-1, 1:]


def action(path, coupling, field, table, pair_factor=PAIR_FACTOR):
    """S = c lambda^2 s^T K s - mu sum_i s_i |seg_i|, exact over the piecewise-constant path."""
    s = path.spins
    interaction = 0.0
    if coupling != 0.0:
        interaction = pair_factor * coupling**2 * float(s @ segment_matrix(table, path.boundaries) @ s)
    return interaction - field * magnetization(path)


@dataclass(frozen=True)
class MoveWeights:
    insert_pair: float = 1.0
    delete_pair: float = 1.0
    shift: float = 2.0
    flip: float = 0.5
    insert_one: float = 0.5
    delete_one: float = 0.5

    def __post_init__(self):
        values = np.array(self.as_tuple())
        if np.any(values < 0.0) or values.sum() <= 0.0:
            raise ConfigurationError("move weights must be nonnegative with a positive sum",
                                     reason="mc.move_weights")
        if (self.insert_pair > 0.0) != (self.delete_pair > 0.0) or (self.insert_one > 0.0) != (self.delete_one > 0.0):
            raise ConfigurationError("insert and delete moves must be enabled together", reason="mc.move_weights")

    def as_tuple(self):
        return (self.insert_pair, self.delete_pair, self.shift, self.flip, self.insert_one, self.delete_one)

    def probabilities(self):
        values = np.array(self.as_tuple())
        return values / values.sum()


MOVES = ("insert_pair", "delete_pair", "shift", "flip", "insert_one", "delete_one")
# insert/delete partners, rescaled together
MOVE_GROUPS = ((0, 1), (4, 5))
TUNE_INTERVAL = 200
SHIFT_ACCEPTANCE = (0.25, 0.5)
MIN_SHIFT_FRACTION = 1e-4
MIN_MOVE_SCALE = 0.125


@dataclass(frozen=True)
class McConfig:
    """
    Sampler settings.

    samples: importance-sampled paths, or recorded measurements summed over chains
    burn_in: fraction of each chain's sweeps discarded
    thinning: sweeps between measurements
    """

    horizon: float = 10.0
    samples: int = 20000
    chains: int = 4
    burn_in: float = 0.1
    thinning: int = 1
    seed: int = 0
    weights: MoveWeights = field(default_factory=MoveWeights)
    chunk_size: int = 4096
    moves_per_sweep: int = 0
    max_jumps: int = 0
    initial_spin: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ConfigurationError(f"horizon T must be positive, got {self.horizon}", reason="mc.horizon")
        for name in ("samples", "chains", "thinning", "chunk_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive", reason=f"mc.{name}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigurationError(f"burn-in fraction must lie in [0, 1), got {self.burn_in}", reason="mc.burn_in")
        if self.initial_spin not in (-1, 0, 1):
            raise ConfigurationError("initial_spin must be -1, +1 or 0 (random)", reason="mc.initial_spin")
        if self.max_jumps < 0 or self.moves_per_sweep < 0:
            raise ConfigurationError("max_jumps and moves_per_sweep must be nonnegative", reason="mc.caps")

    @property
    def sweep_length(self):
        return self.moves_per_sweep or max(4, int(math.ceil(2.0 * self.horizon)))

    def with_horizon(self, T):
        return replace(self, horizon=float(T))


def _path_weights(paths, coupling, field, table, pair_factor):
    return np.array([action(p, coupling, field, table, pair_factor) for p in paths])


def _partition_chunk(index, size, coupling, field, table, cfg, pair_factor):
    rng = stream(cfg.seed, PARTITION_STREAMS + index)
    paths = [sample_free_path(cfg.horizon, rng) for _ in range(size)]
    return np.exp(_path_weights(paths, coupling, field, table, pair_factor))


def estimate_partition(coupling, field, table, cfg, pair_factor=PAIR_FACTOR):
    """
    Z_T = E[exp S] over free paths by plain importance sampling.

    Paths are drawn in chunks, each from its own stream, and merged in chunk
    order. A warning is attached when one weight exceeds 5% of the total.
    """
    start = time.perf_counter()
    if coupling == 0.0 and field == 0.0:
        return Estimate.exact(1.0).with_diagnostics(n_paths=cfg.samples, seconds=0.0)
    sizes = [min(cfg.chunk_size, cfg.samples - s) for s in range(0, cfg.samples, cfg.chunk_size)]
    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        chunks = list(pool.map(
            lambda args: _partition_chunk(*args, coupling, field, table, cfg, pair_factor),
            enumerate(sizes)))
    weights = np.concatenate(chunks)
    est = Estimate.from_samples(weights, independent=True)
    top = float(weights.max() / weights.sum())
    est = est.with_diagnostics(max_weight_fraction=top, seconds=time.perf_counter() - start)
    if top > HEAVY_TAIL_FRACTION:
        msg = f"importance weights are heavy-tailed: max weight is {100 * top:.1f}% of the total"
        log.warning(msg)
        est = est.with_warning(msg)
    return est


def estimate_energy(coupling, field, table, cfg, pair_factor=PAIR_FACTOR):
    """Bloch estimate E = -1 - (1/T) ln Z_T with the error propagated through the logarithm."""
    z = estimate_partition(coupling, field, table, cfg, pair_factor)
    if not z.mean > 0.0:
        raise EstimationError(f"partition estimate {z.mean:g} is not positive; increase samples")
    T = cfg.horizon
    return replace(
        z,
        mean=-1.0 - math.log(z.mean) / T,
        stderr=z.stderr / (T * z.mean),
        diagnostics={**z.diagnostics, "partition": z.mean, "partition_stderr": z.stderr},
    )


class _Chain:
    """
    Metropolis chain on (initial spin, jump times) targeting exp(S) times the free measure.

    During burn-in tune() adapts the shift width and the move mix every
    TUNE_INTERVAL moves; freeze() fixes both and restarts the acceptance counts.
    """

    def __init__(self, coupling, field, table, cfg, rng, pair_factor):
        self.c = pair_factor * coupling**2
        self.coupling = coupling
        self.pair_factor = pair_factor
        self.field = field
        self.table = table
        self.T = cfg.horizon
        self.rng = rng
        self.cap = cfg.max_jumps or None
        self.base = np.array(cfg.weights.as_tuple(), dtype=float)
        self.scale = np.ones(len(MOVES))
        self.p = cfg.weights.probabilities()
        self.width = self.T
        self.tuning = True
        if cfg.initial_spin:
            self.x0 = cfg.initial_spin
            self.jumps = np.zeros(0)
        else:
            start = sample_free_path(self.T, rng)
            self.x0 = start.initial_spin
            self.jumps = np.array(start.jumps)
            if self.cap is not None and self.jumps.size > self.cap:
                self.jumps = self.jumps[: self.cap]
        self.proposed = np.zeros(len(MOVES), dtype=np.int64)
        self.accepted = np.zeros(len(MOVES), dtype=np.int64)
        self.window_proposed = np.zeros(len(MOVES), dtype=np.int64)
        self.window_accepted = np.zeros(len(MOVES), dtype=np.int64)

    @property
    def n(self):
        return self.jumps.size

    def path(self):
        return SpinPath(self.T, self.x0, self.jumps)

    def magnetization(self):
        bounds = np.concatenate([[0.0], self.jumps, [self.T]])
        return float(np.diff(bounds) @ (_alternating(self.n + 1) * self.x0))

    def _segment(self, t):
        """Index and spin of the segment containing t."""
        i = int(np.searchsorted(self.jumps, t, side="right"))
        return i, self.x0 * (1 - 2 * (i % 2))

    def _flip_delta(self, x, y, sigma):
        """Change of S when flipping [x, y), which lies inside one segment of spin sigma."""
        delta = 2.0 * self.field * sigma * (y - x)
        if self.c == 0.0:
            return delta
        tau = np.concatenate([[0.0], self.jumps, [self.T]])
        V = self.table.V
        F = V(y - tau) - V(x - tau)
        s = _alternating(self.n + 1) * self.x0
        cross = sigma * float(s @ (F[:-1] - F[1:])) - 2.0 * float(V(y - x))
        return delta - 4.0 * self.c * cross

    def _full_action(self, x0, jumps):
        return action(SpinPath(self.T, x0, jumps), self.coupling, self.field, self.table, self.pair_factor)

    def _accept(self, log_ratio):
        return log_ratio >= 0.0 or self.rng.random() < math.exp(log_ratio)

    def insert_pair(self):
        x, y = np.sort(self.rng.uniform(0.0, self.T, 2))
        if self.cap is not None and self.n + 2 > self.cap:
            return False
        i, sigma = self._segment(x)
        if i != np.searchsorted(self.jumps, y, side="right") or x == y:
            return False
        ratio = self.p[1] * self.T**2 / (2.0 * self.p[0] * (self.n + 1))
        if self._accept(self._flip_delta(x, y, sigma) + math.log(ratio)):
            self.jumps = np.insert(self.jumps, i, [x, y])
            return True
        return False

    def delete_pair(self):
        if self.n < 2:
            return False
        k = int(self.rng.integers(0, self.n - 1))
        x, y = self.jumps[k], self.jumps[k + 1]
        sigma = self.x0 * (1 - 2 * ((k + 1) % 2))
        ratio = self.p[0] * 2.0 * (self.n - 1) / (self.T**2 * self.p[1])
        if self._accept(self._flip_delta(x, y, sigma) + math.log(ratio)):
            self.jumps = np.delete(self.jumps, [k, k + 1])
            return True
        return False

    def shift(self):
        if self.n == 0:
            return False
        k = int(self.rng.integers(0, self.n))
        lo = self.jumps[k - 1] if k > 0 else 0.0
        hi = self.jumps[k + 1] if k + 1 < self.n else self.T
        old = self.jumps[k]
        new = old + self.rng.uniform(-self.width, self.width)
        if new == old or not lo < new < hi:
            return False
        if new > old:
            delta = self._flip_delta(old, new, self.x0 * (1 - 2 * ((k + 1) % 2)))
        else:
            delta = self._flip_delta(new, old, self.x0 * (1 - 2 * (k % 2)))
        if self._accept(delta):
            self.jumps = self.jumps.copy()
            self.jumps[k] = new
            return True
        return False

    def flip(self):
        if self._accept(2.0 * self.field * self.magnetization()):
            self.x0 = -self.x0
            return True
        return False

    def insert_one(self):
        if self.cap is not None and self.n + 1 > self.cap:
            return False
        x = self.rng.uniform(0.0, self.T)
        if x == 0.0 or np.any(self.jumps == x):
            return False
        new = np.insert(self.jumps, int(np.searchsorted(self.jumps, x)), x)
        delta = self._full_action(self.x0, new) - self._full_action(self.x0, self.jumps)
        ratio = self.p[5] * self.T / (self.p[4] * (self.n + 1))
        if self._accept(delta + math.log(ratio)):
            self.jumps = new
            return True
        return False

    def delete_one(self):
        if self.n == 0:
            return False
        k = int(self.rng.integers(0, self.n))
        new = np.delete(self.jumps, k)
        delta = self._full_action(self.x0, new) - self._full_action(self.x0, self.jumps)
        ratio = self.p[4] * self.n / (self.p[5] * self.T)
        if self._accept(delta + math.log(ratio)):
            self.jumps = new
            return True
        return False

    def step(self):
        move = int(self.rng.choice(len(MOVES), p=self.p))
        self.proposed[move] += 1
        self.window_proposed[move] += 1
        if getattr(self, MOVES[move])():
            self.accepted[move] += 1
            self.window_accepted[move] += 1

    def tune(self):
        """Adapt the shift width and the insert/delete weights to the acceptance since the last call."""
        if not self.tuning:
            raise ArgumentError("chain is frozen; tuning is only allowed during burn-in")
        prop, acc = self.window_proposed, self.window_accepted
        k = MOVES.index("shift")
        if prop[k]:
            rate = acc[k] / prop[k]
            if rate > SHIFT_ACCEPTANCE[1]:
                self.width = min(self.T, 1.5 * self.width)
            elif rate < SHIFT_ACCEPTANCE[0]:
                self.width = max(MIN_SHIFT_FRACTION * self.T, 0.5 * self.width)
        low = ACCEPTANCE_BOUNDS[0]
        for group in MOVE_GROUPS:
            idx = list(group)
            n = prop[idx].sum()
            if not n:
                continue
            rate = acc[idx].sum() / n
            if rate < low:
                self.scale[idx] = max(MIN_MOVE_SCALE, 0.5 * self.scale[idx[0]])
            elif rate > 2.0 * low:
                self.scale[idx] = min(1.0, 2.0 * self.scale[idx[0]])
        weights = self.base * self.scale
        self.p = weights / weights.sum()
        self.window_proposed[:] = 0
        self.window_accepted[:] = 0

    def freeze(self):
        self.tuning = False
        self.proposed[:] = 0
        self.accepted[:] = 0

    def tuning_record(self):
        return {"shift_width": self.width, "move_probabilities": dict(zip(MOVES, self.p.tolist()))}


def _resolve_observable(observable):
    if callable(observable):
        return observable
    named = {
        "M": magnetization,
        "M2": lambda p: magnetization(p) ** 2,
        "M3": lambda p: magnetization(p) ** 3,
        "jumps": lambda p: float(p.n_jumps),
    }
    if observable not in named:
        raise ArgumentError(f"unknown observable {observable!r}; expected one of {sorted(named)}")
    return named[observable]


def _run_chain(index, observable, coupling, field, table, cfg, pair_factor, per_chain):
    rng = stream(cfg.seed, CHAIN_STREAMS + index)
    chain = _Chain(coupling, field, table, cfg, rng, pair_factor)
    sweeps = per_chain * cfg.thinning
    burn = int(round(cfg.burn_in * sweeps / (1.0 - cfg.burn_in)))
    length = cfg.sweep_length
    for i in range(burn * length):
        chain.step()
        if (i + 1) % TUNE_INTERVAL == 0:
            chain.tune()
    chain.freeze()
    values = np.empty(per_chain)
    for m in range(per_chain):
        for _ in range(cfg.thinning * length):
            chain.step()
        values[m] = observable(chain.path())
    return values, chain.proposed, chain.accepted, chain.tuning_record()


@dataclass(frozen=True)
class ChainRun:
    estimate: Estimate
    series: list
    acceptance: dict
    tuning: list = field(default_factory=list)


def run_chains(observable, coupling, field, table, cfg, pair_factor=PAIR_FACTOR):
    """
    Run cfg.chains independent chains and pool their estimates in chain order.

    Each chain tunes its proposals during burn-in; the acceptance rates and
    the out-of-range warning refer to the frozen sampler only.
    """
    if cfg.horizon > table.t_max:
        raise ArgumentError(f"kernel table covers t <= {table.t_max:g}, horizon is {cfg.horizon:g}")
    fn = _resolve_observable(observable)
    per_chain = max(1, cfg.samples // cfg.chains)
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(
            lambda i: _run_chain(i, fn, coupling, field, table, cfg, pair_factor, per_chain),
            range(cfg.chains)))
    series = [r[0] for r in results]
    proposed = sum(r[1] for r in results)
    accepted = sum(r[2] for r in results)
    rates = {name: (float(a / p) if p else None) for name, p, a in zip(MOVES, proposed, accepted)}
    est = combine([Estimate.from_samples(s) for s in series])
    movers = [i for i, name in enumerate(MOVES) if name != "flip" and proposed[i]]
    overall = float(accepted[movers].sum() / proposed[movers].sum()) if movers else 1.0
    tuning = [r[3] for r in results]
    est = est.with_diagnostics(acceptance=overall, shift_width=[t["shift_width"] for t in tuning],
                               seconds=time.perf_counter() - start)
    lo, hi = ACCEPTANCE_BOUNDS
    if not lo <= overall <= hi:
        msg = f"Metropolis acceptance rate {overall:.3f} outside [{lo}, {hi}] after tuning"
        log.warning(msg)
        est = est.with_warning(msg)
    return ChainRun(est, series, rates, tuning)


def mcmc_expectation(observable, coupling, field, table, cfg, pair_factor=PAIR_FACTOR):
    """<<Y>>_{T, lambda, mu}: expectation of the observable under the tilted path measure."""
    return run_chains(observable, coupling, field, table, cfg, pair_factor).estimate


def _scaled(est, factor):
    return replace(est, mean=est.mean * factor, stderr=est.stderr * abs(factor),
                   diagnostics={**est.diagnostics,
                                "binning_stderr": est.diagnostics.get("binning_stderr", 0.0) * abs(factor)})


def estimate_susceptibility(coupling, table, cfg, pair_factor=PAIR_FACTOR):
    """(1/T) <<M^2>>_{T, lambda, 0}, the estimate of -d^2E/dmu^2 at mu = 0."""
    est = mcmc_expectation("M2", coupling, 0.0, table, cfg, pair_factor)
    return _scaled(est, 1.0 / cfg.horizon)


def estimate_magnetization(coupling, field, table, cfg, pair_factor=PAIR_FACTOR):
    """(1/T) <<M>>_{T, lambda, mu}, the estimate of dE/dmu = <psi, sigma_x psi>."""
    est = mcmc_expectation("M", coupling, field, table, cfg, pair_factor)
    return _scaled(est, 1.0 / cfg.horizon)


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    bound: float
    sectors: np.ndarray
    jump_cap: int
    order: int

    def __float__(self):
        return self.value

    @property
    def sector_probabilities(self):
        return self.sectors / self.sectors.sum()

    def to_record(self):
        return {"value": self.value, "bound": self.bound, "sectors": self.sectors.tolist(),
                "jump_cap": self.jump_cap, "order": self.order}


def _sector_integral(n, coupling, field, table, T, order, pair_factor, batch=32768):
    """int over the ordered simplex of (1/2) sum_x0 exp S, by tensor Gauss-Legendre on the conical map."""
    c = pair_factor * coupling**2
    alt = _alternating(n + 1)
    if n == 0:
        return math.exp(c * 2.0 * float(table.V(T))) * math.cosh(field * T)
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    grids = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1).reshape(-1, n)
    weights = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    total = 0.0
    for start in range(0, grids.shape[0], batch):
        u = grids[start:start + batch]
        tau = T * np.cumprod(u[:, ::-1], axis=1)[:, ::-1]
        jac = T**n * np.prod(u ** np.arange(n), axis=1)
        bounds = np.concatenate([np.zeros((u.shape[0], 1)), tau, np.full((u.shape[0], 1), T)], axis=1)
        K = segment_matrix(table, bounds)
        s_int = c * np.einsum("i,pij,j->p", alt, K, alt)
        m_alt = np.diff(bounds, axis=1) @ alt
        total += float(np.sum(weights[start:start + batch] * jac * np.exp(s_int) * np.cosh(field * m_alt)))
    return total


def brute_force_partition(coupling, field, table, T, jump_cap=6, tol=BRUTE_FORCE_TOL, order=6,
                          pair_factor=PAIR_FACTOR):
    """
    Z_T = exp(-T) sum_{n <= cap} int_{0 < t_1 < ... < t_n < T} (1/2) sum_x0 exp S dt.

    The sectors beyond the cap are bounded by P[Poisson(T) > cap] exp(max |S|);
    a bound above tol is refused with a TruncationError.
    """
    if not 0.0 < T <= BRUTE_FORCE_MAX_T:
        raise ArgumentError(f"brute-force oracle needs 0 < T <= {BRUTE_FORCE_MAX_T}, got {T}")
    if not 0 <= jump_cap <= BRUTE_FORCE_MAX_CAP:
        raise ArgumentError(f"jump cap must lie in [0, {BRUTE_FORCE_MAX_CAP}], got {jump_cap}")
    if T > table.t_max:
        raise ArgumentError(f"kernel table covers t <= {table.t_max:g}, horizon is {T:g}")
    max_action = pair_factor * coupling**2 * 2.0 * float(table.V(T)) + abs(field) * T
    bound = float(stats.poisson.sf(jump_cap, T) * math.exp(max_action))
    if bound > tol:
        raise TruncationError(f"jump cap {jump_cap} leaves a truncation bound {bound:.3g} > {tol:g}",
                              bound=bound)
    sectors = np.array([math.exp(-T) * _sector_integral(n, coupling, field, table, T, order, pair_factor)
                        for n in range(jump_cap + 1)])
    return BruteForceResult(float(sectors.sum()), bound, sectors, jump_cap, order)


@dataclass(frozen=True)
class ScanCell:
    coupling: float
    horizon: float
    estimate: Estimate = None
    l1_diag: float = math.nan
    error: dict = None

    def to_row(self):
        chi = self.estimate.mean if self.estimate else math.nan
        err = self.estimate.stderr if self.estimate else math.nan
        return {"lambda": self.coupling, "T": self.horizon, "chi": chi, "chi_err": err, "l1_diag": self.l1_diag}


@dataclass(frozen=True)
class ScanResult:
    cells: list
    slopes: dict
    monotone_in_coupling: dict
    l1: float

    def rows(self):
        return [cell.to_row() for cell in self.cells]


def weighted_slope(T, values, errors):
    """Weighted least-squares slope d value / dT and its standard error."""
    T, values, errors = map(lambda a: np.asarray(a, dtype=float), (T, values, errors))
    if T.size < 2:
        return math.nan, math.nan
    w = 1.0 / np.maximum(errors, 1e-300) ** 2
    if not np.all(np.isfinite(w)) or np.all(errors == 0.0):
        w = np.ones_like(T)
    tm = np.sum(w * T) / w.sum()
    sxx = np.sum(w * (T - tm) ** 2)
    slope = float(np.sum(w * (T - tm) * values) / sxx)
    return slope, float(math.sqrt(1.0 / sxx)) if np.any(errors > 0.0) else 0.0


def coupling_scan(couplings, table, cfg, horizons, pair_factor=PAIR_FACTOR):
    """
    (1/T) <<M^2>> on a (lambda, T) grid with the diagnostic lambda^2 ||W||_1 per row.

    Every cell runs from its own derived seed; failed cells keep their error
    record and the scan continues.
    """
    couplings, horizons = list(couplings), list(horizons)
    if not couplings or not horizons:
        raise ArgumentError("scan grids must be nonempty")
    if max(horizons) > table.t_max:
        raise ArgumentError(f"kernel table covers t <= {table.t_max:g}, largest horizon is {max(horizons):g}")
    l1 = kernel_mod.l1_norm(table.source, table=table)
    jobs = [(i, lam, T) for i, (lam, T) in enumerate((lam, T) for lam in couplings for T in horizons)]

    def cell(job):
        i, lam, T = job
        sub = replace(cfg, horizon=float(T), seed=derive_seed(cfg.seed, i), threads=1)
        try:
            est = estimate_susceptibility(lam, table, sub, pair_factor)
            return ScanCell(lam, T, est, lam**2 * l1)
        except SpinBosonError as e:
            log.warning("scan cell lambda=%g T=%g failed: %s", lam, T, e)
            return ScanCell(lam, T, None, lam**2 * l1, e.to_record())

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        cells = list(pool.map(cell, jobs))

    slopes, monotone = {}, {}
    for lam in couplings:
        row = [c for c in cells if c.coupling == lam and c.estimate is not None]
        slopes[lam] = weighted_slope([c.horizon for c in row], [c.estimate.mean for c in row],
                                     [c.estimate.stderr for c in row])
    for T in horizons:
        column = [c for c in cells if c.horizon == T and c.estimate is not None]
        monotone[T] = all(b.estimate.mean >= a.estimate.mean - 3.0 * math.hypot(a.estimate.stderr, b.estimate.stderr)
                          for a, b in zip(column, column[1:]))
    return ScanResult(cells, slopes, monotone, l1)
