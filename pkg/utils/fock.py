"""Truncated Fock space exact diagonalization of the spin-boson Hamiltonian.

States are (spin, occupations) with spin 0 = down, 1 = up. Occupation tuples
are enumerated lexicographically and the spin index runs fastest, so the
ordinal of (s, occ) is 2 * occ_index + s and every full-space operator is
kron(boson part, spin part). Omega_down (spin down, vacuum) has ordinal 0.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from . import model
from .errors import (
    ArgumentError,
    CapacityError,
    NumericalError,
    PreconditionError,
    SolverError,
    solver_guard,
)
from .streams import stream
from .system import memory_budget_bytes

log = logging.getLogger(__name__)

SIGMA_Z = sparse.csr_matrix(np.diag([-1.0, 1.0]))
SIGMA_X = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
SPIN_ID = sparse.identity(2, format="csr")

DENSE_LIMIT = 1500
SOLVER_TOL = 1e-10
DEGENERACY_GAP = 1e-10
AMPLITUDE_RTOL = 1e-12
AMPLITUDE_TOL = 1e-10
LANCZOS_MAX_STEPS = 400
CG_RTOL = 1e-10
FD_STEP = 1e-3
FD_CONFIDENCE = 1e-4
START_STREAM = 0xF0C


@dataclass(frozen=True)
class FockBasis:
    """Spin-tagged occupation states with per-mode cap n_max and total cap N_max."""

    n_modes: int
    n_max: int
    N_max: int
    occupations: np.ndarray = field(repr=False)
    _keys: np.ndarray = field(default=None, repr=False)
    _lookup: dict = field(default=None, repr=False)

    @property
    def n_occupations(self):
        return int(self.occupations.shape[0])

    @property
    def dimension(self):
        return 2 * self.n_occupations

    @property
    def vacuum_down(self):
        return 0

    @property
    def boson_number(self):
        """Total boson number of every occupation tuple."""
        return self.occupations.sum(axis=1)

    def occupation_index(self, occupations):
        """Indices of occupation rows (2-D array), -1 where the row is not in the basis."""
        rows = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        if self._keys is not None:
            keys = rows @ _radix(self.n_modes, self.n_max)
            pos = np.clip(np.searchsorted(self._keys, keys), 0, self._keys.size - 1)
            return np.where(self._keys[pos] == keys, pos, -1)
        return np.array([self._lookup.get(r.astype(np.uint8).tobytes(), -1) for r in rows])

    def ordinal(self, spin, occupations):
        index = int(self.occupation_index(occupations)[0])
        if index < 0:
            raise ArgumentError(f"occupations {tuple(occupations)} are outside the truncated basis")
        return 2 * index + int(spin)

    def state(self, ordinal):
        """(spin, occupation tuple) of an ordinal."""
        index, spin = divmod(int(ordinal), 2)
        return spin, tuple(int(o) for o in self.occupations[index])

    def sector_mask(self, n):
        """Full-space mask of the n-boson sector."""
        return np.repeat(self.boson_number == n, 2)


def _radix(n_modes, n_max):
    base = n_max + 1
    return base ** np.arange(n_modes - 1, -1, -1, dtype=np.int64)


def count_occupations(n_modes, n_max, N_max):
    """Number of tuples with o_j <= n_max and sum <= N_max, without enumerating them."""
    counts = np.zeros(N_max + 1, dtype=object)
    counts[0] = 1
    for _ in range(n_modes):
        nxt = np.zeros_like(counts)
        for o in range(min(n_max, N_max) + 1):
            nxt[o:] += counts[: N_max + 1 - o]
        counts = nxt
    return int(counts.sum())


def estimated_bytes(n_modes, n_occupations):
    """Rough footprint of the basis plus a Hamiltonian in CSR form."""
    dim = 2 * n_occupations
    nnz = dim * (3 + 2 * n_modes)
    return n_occupations * n_modes + nnz * 12 + dim * 8 * 8


def build_basis(modes, n_max, N_max, budget_mb=None):
    """
    Enumerate the truncated basis.

    Args:
        modes: DiscreteModes (only the mode count is used)
        n_max: per-mode occupation cap
        N_max: total boson-number cap
        budget_mb: memory budget; defaults to half the available memory

    Returns:
        FockBasis, enumerated lexicographically in the occupations.
    """
    n_modes = modes.n_modes if isinstance(modes, model.DiscreteModes) else int(modes)
    n_max, N_max = int(n_max), int(N_max)
    if n_max < 0 or N_max < 0:
        raise ArgumentError(f"occupation caps must be nonnegative, got n_max={n_max}, N_max={N_max}")
    if n_max > 255:
        raise ArgumentError("per-mode occupation cap above 255 is not supported")
    n_occ = count_occupations(n_modes, n_max, N_max)
    needed = estimated_bytes(n_modes, n_occ)
    budget = memory_budget_bytes(budget_mb)
    if needed > budget:
        raise CapacityError(f"Fock space of dimension {2 * n_occ} needs ~{needed / 1024**2:.0f} MB, "
                            f"budget is {budget / 1024**2:.0f} MB", dimension=2 * n_occ)

    rows = np.zeros((1, 0), dtype=np.int64)
    totals = np.zeros(1, dtype=np.int64)
    for _ in range(n_modes):
        room = np.minimum(n_max, N_max - totals)
        reps = room + 1
        parent = np.repeat(np.arange(rows.shape[0]), reps)
        offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        rows = np.column_stack([rows[parent], offsets])
        totals = totals[parent] + offsets
    rows.setflags(write=False)

    if (n_max + 1) ** n_modes < 2**62:
        keys = rows @ _radix(n_modes, n_max)
        basis = FockBasis(n_modes, n_max, N_max, rows, _keys=keys)
    else:
        lookup = {r.astype(np.uint8).tobytes(): i for i, r in enumerate(rows)}
        basis = FockBasis(n_modes, n_max, N_max, rows, _lookup=lookup)
    log.debug("Fock basis: %d modes, n_max=%d, N_max=%d, dimension %d", n_modes, n_max, N_max, basis.dimension)
    return basis


@dataclass(frozen=True)
class SparseOperator:
    """Real sparse matrix over a FockBasis; the symmetric flag is audited on construction."""

    matrix: sparse.csr_matrix
    symmetric: bool = True

    def __post_init__(self):
        object.__setattr__(self, "matrix", sparse.csr_matrix(self.matrix))
        if self.symmetric and not is_exactly_symmetric(self.matrix):
            raise NumericalError("operator flagged self-adjoint is not symmetric", reason="fock.asymmetric")

    @property
    def dimension(self):
        return int(self.matrix.shape[0])

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix, symmetric=False)
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()

    def commutator_norm(self, other):
        """max |entry| of [self, other]."""
        comm = self.matrix @ other.matrix - other.matrix @ self.matrix
        return float(abs(comm).max()) if comm.nnz else 0.0


def is_exactly_symmetric(matrix):
    diff = matrix - matrix.T
    diff.eliminate_zeros()
    return diff.nnz == 0


def _boson_annihilation(basis, j):
    """a_j on the occupation space: <o - e_j| a_j |o> = sqrt(o_j)."""
    occ = basis.occupations
    src = np.flatnonzero(occ[:, j] > 0)
    lowered = occ[src].copy()
    lowered[:, j] -= 1
    dst = basis.occupation_index(lowered)
    n = basis.n_occupations
    return sparse.csr_matrix((np.sqrt(occ[src, j].astype(float)), (dst, src)), shape=(n, n))


def _full(boson, spin=SPIN_ID):
    return sparse.kron(boson, spin, format="csr")


def annihilation_op(basis, j):
    """a_j on the full space (not self-adjoint)."""
    if not 0 <= j < basis.n_modes:
        raise ArgumentError(f"mode index {j} out of range")
    return SparseOperator(_full(_boson_annihilation(basis, j)), symmetric=False)


def number_weighted_op(basis, weights):
    """dGamma(w): diagonal with entry sum_j w_j o_j."""
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != basis.n_modes:
        raise ArgumentError(f"expected {basis.n_modes} weights, got {weights.size}")
    diag = basis.occupations @ weights if basis.n_modes else np.zeros(basis.n_occupations)
    return SparseOperator(_full(sparse.diags(diag, format="csr")))


def number_op(basis):
    return number_weighted_op(basis, np.ones(basis.n_modes))


def _boson_field(basis, couplings):
    n = basis.n_occupations
    a = sparse.csr_matrix((n, n))
    for j, v in enumerate(couplings):
        if v != 0.0:
            a = a + v * _boson_annihilation(basis, j)
    return (a + a.T).tocsr()


def field_op(basis, couplings):
    """phi(v) = a(v) + a(v)^*, with states pushed above the caps dropped."""
    couplings = np.asarray(couplings, dtype=float).reshape(-1)
    if couplings.size != basis.n_modes:
        raise ArgumentError(f"expected {basis.n_modes} couplings, got {couplings.size}")
    return SparseOperator(_full(_boson_field(basis, couplings)))


def hamiltonian(basis, modes, coupling, field):
    """H = sigma_z (x) 1 + 1 (x) dGamma(omega) + sigma_x (x) (lambda phi(v) + mu)."""
    if basis.n_modes != modes.n_modes:
        raise ArgumentError("basis was built for a different number of modes")
    n = basis.n_occupations
    boson_id = sparse.identity(n, format="csr")
    free_field = sparse.diags(basis.occupations @ modes.omega if n and basis.n_modes else np.zeros(n))
    interaction = coupling * _boson_field(basis, modes.v) + field * boson_id
    H = _full(boson_id, SIGMA_Z) + _full(free_field) + _full(interaction, SIGMA_X)
    return SparseOperator(H)


def parity_op(basis):
    """P = sigma_z (x) (-1)^N."""
    sign = np.where(basis.boson_number % 2 == 0, 1.0, -1.0)
    return SparseOperator(_full(sparse.diags(sign), SIGMA_Z))


def sigma_x_op(basis):
    return SparseOperator(_full(sparse.identity(basis.n_occupations), SIGMA_X))


def sigma_x_apply(psi):
    """(sigma_x (x) 1) psi: swaps the spin components of every occupation state."""
    psi = np.asarray(psi)
    return psi.reshape(-1, 2)[:, ::-1].reshape(-1)


def sigma_x_expectation(psi):
    """<psi, (sigma_x (x) 1) psi>."""
    pairs = np.asarray(psi, dtype=float).reshape(-1, 2)
    return float(2.0 * np.dot(pairs[:, 0], pairs[:, 1]))


@dataclass(frozen=True)
class GroundStateResult:
    energy: float
    vector: np.ndarray = field(repr=False)
    gap: float
    residual: float
    second_energy: float
    dimension: int
    method: str
    degenerate: bool = False
    seconds: float = 0.0
    warnings: tuple = ()

    def to_record(self):
        return {
            "energy": self.energy,
            "gap": self.gap,
            "residual": self.residual,
            "second_energy": self.second_energy,
            "dimension": self.dimension,
            "method": self.method,
            "degenerate": self.degenerate,
            "warnings": list(self.warnings),
        }


def _fix_sign(psi, reference=0):
    anchor = reference if abs(psi[reference]) > 1e-12 else int(np.argmax(np.abs(psi)))
    return -psi if psi[anchor] < 0 else psi


def ground_state(H, tol=SOLVER_TOL, max_iterations=None):
    """
    Lowest eigenpair and the second eigenvalue of H.

    Dense eigh below DENSE_LIMIT, ARPACK (smallest algebraic) above it.

    Returns:
        GroundStateResult with the sign fixed so that psi[Omega_down] >= 0.
    """
    if not H.symmetric:
        raise PreconditionError("ground_state needs a self-adjoint operator")
    start = time.perf_counter()
    dim = H.dimension
    if dim <= DENSE_LIMIT:
        top = min(1, dim - 1)
        with solver_guard("dense ground state"):
            values, vectors = linalg.eigh(H.toarray(), subset_by_index=[0, top])
        method = "dense"
    else:
        v0 = stream(0, START_STREAM).standard_normal(dim)
        try:
            values, vectors = splinalg.eigsh(H.matrix, k=2, which="SA", tol=0.0, v0=v0,
                                             maxiter=max_iterations)
        except splinalg.ArpackNoConvergence as e:
            best = math.inf
            for val, vec in zip(e.eigenvalues, e.eigenvectors.T):
                best = min(best, float(np.linalg.norm(H @ vec - val * vec)))
            raise SolverError(f"ARPACK did not converge for dimension {dim}", best_residual=best) from e
        except splinalg.ArpackError as e:
            raise SolverError(f"ARPACK failed for dimension {dim}: {e}", reason="fock.arpack_error") from e
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
        method = "arpack"
    energy = float(values[0])
    psi = vectors[:, 0] / np.linalg.norm(vectors[:, 0])
    psi = _fix_sign(psi)
    second = float(values[1]) if values.size > 1 else math.inf
    gap = max(0.0, second - energy)
    residual = float(np.linalg.norm(H @ psi - energy * psi))
    if residual > tol * max(1.0, abs(energy)):
        raise SolverError(f"ground-state residual {residual:.3g} above tolerance {tol:g}", best_residual=residual)
    warnings = ()
    degenerate = gap < DEGENERACY_GAP
    if degenerate:
        msg = f"ground state is degenerate to {gap:.2g}; eigenvector is not unique"
        log.warning(msg)
        warnings = (msg,)
    return GroundStateResult(
        energy=energy,
        vector=psi,
        gap=gap,
        residual=residual,
        second_energy=second,
        dimension=dim,
        method=method,
        degenerate=degenerate,
        seconds=time.perf_counter() - start,
        warnings=warnings,
    )


def solve(modes, coupling, field, n_max, N_max, budget_mb=None):
    """Basis, Hamiltonian and ground state for one (lambda, mu) point."""
    basis = build_basis(modes, n_max, N_max, budget_mb=budget_mb)
    H = hamiltonian(basis, modes, coupling, field)
    return basis, H, ground_state(H)


def _log_weighted_exp(weights, exponents):
    """log sum_k w_k exp(x_k) for w_k >= 0."""
    top = exponents.max()
    return float(top + math.log(np.sum(weights * np.exp(exponents - top))))


def _lanczos_log_amplitude(A, v, T, rtol, max_steps):
    """
    log <v, exp(-T A) v> by Lanczos Gauss quadrature with full reorthogonalization.

    Stops when the log changes by less than rtol between steps or the Krylov
    space becomes invariant.
    """
    n = v.size
    max_steps = min(max_steps, n)
    Q = np.zeros((max_steps + 1, n))
    Q[0] = v / np.linalg.norm(v)
    alpha, beta = [], []
    previous = None
    scale = 1.0
    for k in range(max_steps):
        w = A @ Q[k]
        a = float(Q[k] @ w)
        w = w - a * Q[k]
        if k:
            w = w - beta[-1] * Q[k - 1]
        w = w - Q[: k + 1].T @ (Q[: k + 1] @ w)
        alpha.append(a)
        if k == 0:
            theta, first = np.array([a]), np.array([1.0])
        else:
            with solver_guard("Lanczos tridiagonal"):
                theta, S = linalg.eigh_tridiagonal(np.array(alpha), np.array(beta))
            first = S[0]
        value = _log_weighted_exp(first**2, -T * theta)
        b = float(np.linalg.norm(w))
        scale = max(scale, abs(a), b)
        if b <= 1e-14 * scale:
            return value, k + 1
        if previous is not None and abs(value - previous) < rtol:
            return value, k + 1
        previous = value
        beta.append(b)
        Q[k + 1] = w / b
    raise NumericalError(f"Krylov propagation did not reach {rtol:g} in {max_steps} steps",
                         last_change=abs(value - previous) if previous is not None else math.inf)


def log_semigroup_amplitude(H, T, start=0):
    """log <e_start, exp(-T H) e_start>; start defaults to Omega_down."""
    if not T > 0.0:
        raise ArgumentError(f"T must be positive, got {T}")
    if H.dimension <= DENSE_LIMIT:
        with solver_guard("dense semigroup"):
            values, vectors = linalg.eigh(H.toarray())
        return _log_weighted_exp(vectors[start] ** 2, -T * values)
    v = np.zeros(H.dimension)
    v[start] = 1.0
    value, steps = _lanczos_log_amplitude(H.matrix, v, T, AMPLITUDE_RTOL, LANCZOS_MAX_STEPS)
    log.debug("semigroup amplitude converged after %d Lanczos steps", steps)
    return value


def semigroup_amplitude(H, basis, T):
    """<Omega_down, exp(-T H) Omega_down>, strictly positive."""
    return math.exp(log_semigroup_amplitude(H, T, start=basis.vacuum_down))


def bloch_energy(H, basis, T):
    """-(1/T) ln <Omega_down, exp(-T H) Omega_down>; tends to E as T grows."""
    return -log_semigroup_amplitude(H, T, start=basis.vacuum_down) / T


def bloch_mu_derivative(basis, modes, coupling, field, T, order=1, h=FD_STEP):
    """
    order-th mu-derivative (1 or 2) of -(1/T) ln <Omega_down, exp(-T H(lambda, mu)) Omega_down>
    by central differences of the Krylov amplitudes.
    """
    if order not in (1, 2):
        raise ArgumentError(f"derivative order must be 1 or 2, got {order}")
    f = {s: bloch_energy(hamiltonian(basis, modes, coupling, field + s * h), basis, T) for s in (-1, 0, 1)}
    if order == 1:
        return (f[1] - f[-1]) / (2.0 * h)
    return (f[1] - 2.0 * f[0] + f[-1]) / h**2


def _resolvent_solve(H, E, omega_j, rhs):
    """(H - E + omega_j)^-1 rhs by conjugate gradients."""
    if not omega_j > 0.0:
        raise PreconditionError(f"resolvent at nonpositive mode energy {omega_j}")
    shifted = (H.matrix + (omega_j - E) * sparse.identity(H.dimension, format="csr")).tocsr()
    x, info = splinalg.cg(shifted, rhs, rtol=CG_RTOL, atol=0.0, maxiter=10 * H.dimension)
    if info != 0:
        residual = float(np.linalg.norm(shifted @ x - rhs))
        raise SolverError(f"resolvent solve did not converge (info={info})", best_residual=residual)
    return x


def resolvent_vectors(H, E, psi, modes):
    """(H - E + omega_j)^-1 (sigma_x (x) 1) psi for every mode j."""
    rhs = sigma_x_apply(psi)
    return [_resolvent_solve(H, E, w, rhs) for w in modes.omega]


@dataclass(frozen=True)
class PullThroughReport:
    residuals: np.ndarray

    @property
    def max_residual(self):
        return float(self.residuals.max()) if self.residuals.size else 0.0

    def to_record(self):
        return {"residuals": self.residuals.tolist(), "max_residual": self.max_residual}


def pull_through_residual(H, E, psi, modes, basis, coupling):
    """r_j = || a_j psi + lambda v_j (H - E + omega_j)^-1 (sigma_x (x) 1) psi ||."""
    resolved = resolvent_vectors(H, E, psi, modes)
    residuals = np.array([
        np.linalg.norm(annihilation_op(basis, j) @ psi + coupling * modes.v[j] * x)
        for j, x in enumerate(resolved)
    ])
    return PullThroughReport(residuals)


def resolvent_constant(H, E, psi, modes):
    """C = max_j omega_j^1/2 ||(H - E + omega_j)^-1 sigma_x psi||."""
    norms = np.array([np.linalg.norm(x) for x in resolvent_vectors(H, E, psi, modes)])
    return float(np.max(np.sqrt(modes.omega) * norms))


def _lowest_eigenvalue(matrix):
    with solver_guard("lowest eigenvalue"):
        if matrix.shape[0] <= DENSE_LIMIT:
            return float(linalg.eigh(matrix.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
        v0 = stream(0, START_STREAM).standard_normal(matrix.shape[0])
        return float(splinalg.eigsh(matrix, k=1, which="SA", tol=0.0, v0=v0, return_eigenvectors=False)[0])


@dataclass(frozen=True)
class ResolventCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    lowest_shifted: np.ndarray
    standard_bound: np.ndarray

    @property
    def all_passed(self):
        return bool(np.all(self.passed) and np.all(self.standard_bound))

    def to_record(self):
        return {
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "passed": self.passed.tolist(),
            "lowest_shifted": self.lowest_shifted.tolist(),
            "standard_bound": self.standard_bound.tolist(),
        }


def resolvent_norm_check(H, E, psi, modes, chi, eps_tol=1e-6, bound_tol=1e-10):
    """
    Per mode: ||(H - E + omega_j)^-1 sigma_x psi|| <= sqrt(chi) omega_j^-1/2 (1 + eps_tol), and the
    standard bound: the smallest eigenvalue of H - E + omega_j equals omega_j.
    """
    if chi < 0.0:
        raise ArgumentError(f"susceptibility must be nonnegative, got {chi}")
    lhs = np.array([np.linalg.norm(x) for x in resolvent_vectors(H, E, psi, modes)])
    rhs = math.sqrt(chi) / np.sqrt(modes.omega)
    ident = sparse.identity(H.dimension, format="csr")
    lowest = np.array([_lowest_eigenvalue((H.matrix + (w - E) * ident).tocsr()) for w in modes.omega])
    return ResolventCheck(
        lhs=lhs,
        rhs=rhs,
        passed=lhs <= rhs * (1.0 + eps_tol),
        lowest_shifted=lowest,
        standard_bound=np.abs(lowest - modes.omega) <= bound_tol * np.maximum(1.0, modes.omega),
    )


@dataclass(frozen=True)
class FiniteDifference:
    """Second mu-derivative of E at mu = 0 from the symmetric stencil."""

    value: float
    value_half_step: float
    error: float
    richardson: float
    step: float
    low_confidence: bool
    warnings: tuple = ()

    @property
    def susceptibility(self):
        """-d^2E/dmu^2."""
        return -self.value

    def to_record(self):
        return {
            "d2E_dmu2": self.value,
            "chi": self.susceptibility,
            "value_half_step": self.value_half_step,
            "error": self.error,
            "richardson": self.richardson,
            "step": self.step,
            "low_confidence": self.low_confidence,
            "warnings": list(self.warnings),
        }


def susceptibility_fd(modes, coupling, h=FD_STEP, n_max=8, N_max=8, threads=1, budget_mb=None):
    """
    (E(h) - 2E(0) + E(-h)) / h^2 at mu = 0, using E(h) = E(-h).

    The error estimate is the difference to the same stencil at h/2; above
    1e-4 the result is flagged low-confidence.
    """
    if not h > 0.0:
        raise ArgumentError(f"finite-difference step must be positive, got {h}")
    basis = build_basis(modes, n_max, N_max, budget_mb=budget_mb)

    def energy(mu):
        return ground_state(hamiltonian(basis, modes, coupling, mu)).energy

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        e0, eh, eh2 = pool.map(energy, [0.0, h, 0.5 * h])
    value = 2.0 * (eh - e0) / h**2
    value_half = 2.0 * (eh2 - e0) / (0.5 * h) ** 2
    error = abs(value - value_half)
    warnings = ()
    low = error > FD_CONFIDENCE
    if low:
        msg = f"finite-difference susceptibility low-confidence: step error {error:.2g}"
        log.warning(msg)
        warnings = (msg,)
    return FiniteDifference(
        value=value,
        value_half_step=value_half,
        error=error,
        richardson=(4.0 * value_half - value) / 3.0,
        step=h,
        low_confidence=low,
        warnings=warnings,
    )


def number_sector_identity(basis, psi):
    """max over n of | sum_j ||a_j psi_n||^2 - n ||psi_n||^2 | with psi_n the n-boson component."""
    worst = 0.0
    ops = [annihilation_op(basis, j) for j in range(basis.n_modes)]
    for n in range(basis.N_max + 1):
        mask = basis.sector_mask(n)
        if not mask.any():
            continue
        psi_n = np.where(mask, psi, 0.0)
        lhs = sum(float(np.sum((a @ psi_n) ** 2)) for a in ops)
        worst = max(worst, abs(lhs - n * float(psi_n @ psi_n)))
    return worst


def operator_decomposition_residual(basis, psi, weights):
    """| <psi, dGamma(A) psi> - sum_j A_j ||a_j psi||^2 | for nonnegative weights A_j."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0.0):
        raise ArgumentError("operator weights must be nonnegative")
    lhs = float(psi @ (number_weighted_op(basis, weights) @ psi))
    rhs = sum(w * float(np.sum((annihilation_op(basis, j) @ psi) ** 2)) for j, w in enumerate(weights))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class LadderRung:
    mass: float
    min_omega: float
    energy: float
    chi: float
    resolvent_constant: float
    field_energy: float
    field_bound: float

    def to_record(self):
        return dict(self.__dict__)


def mass_ladder(spec, masses, n_modes, scheme=model.Scheme.GAUSS, n_max=4, N_max=4,
                regularization=model.Dispersion.SHIFT, threads=1, budget_mb=None):
    """
    Ground-state data along a strictly decreasing mass sequence.

    Each rung regularizes the continuum model with mass m_n, discretizes it on
    the common scheme and records E, chi, the resolvent constant C_n and the
    field energy <psi, dGamma(omega) psi> against lambda^2 C_n^2 sum_j v_j^2.

    Returns:
        (rungs, monotone) where monotone tells whether E_n is nonincreasing.
    """
    masses = [float(m) for m in masses]
    if not masses or any(b >= a for a, b in zip(masses, masses[1:])):
        raise ArgumentError("mass ladder needs a nonempty strictly decreasing sequence")

    def rung(m):
        modes = model.discretize(model.regularize_mass(spec, m, regularization), n_modes, scheme)
        basis, H, gs = solve(modes, spec.coupling, 0.0, n_max, N_max, budget_mb=budget_mb)
        chi = susceptibility_fd(modes, spec.coupling, n_max=n_max, N_max=N_max, budget_mb=budget_mb).susceptibility
        C = resolvent_constant(H, gs.energy, gs.vector, modes)
        field_energy = float(gs.vector @ (number_weighted_op(basis, modes.omega) @ gs.vector))
        return LadderRung(m, modes.m_omega, gs.energy, chi, C, field_energy,
                          spec.coupling**2 * C**2 * modes.norm_squared())

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rungs = list(pool.map(rung, masses))
    energies = np.array([r.energy for r in rungs])
    monotone = bool(np.all(np.diff(energies) <= 1e-12))
    if not monotone:
        log.warning("mass ladder energies are not nonincreasing as the mass decreases")
    return rungs, monotone
