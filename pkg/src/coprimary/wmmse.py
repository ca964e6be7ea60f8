"""
Joint precoder/decoder design by weighted-MMSE block coordinate descent.

With the subcarrier assignment fixed, every scheduled (user, subcarrier)
pair is one link. Each iteration alternates, per base station, between

1. the linear MMSE receiver ``U`` of every link,
2. the MSE weight ``W = E^{-1}``,
3. the power multiplier ``lambda`` of the base station, found by bisection,
4. the closed-form precoders ``T(lambda)``.

Shared-band links see the other base station as interference, and a base
station's precoders on a shared subcarrier leak into the other cell's
receivers on that subcarrier; both couplings enter the updates below.

Per-cell quantities are stored as stacked arrays with one leading entry per
link, so every step is a handful of batched matrix operations.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .channel import DEDICATED, SHARED, ChannelSet
from .linalg import (
    PIVOT_RTOL,
    LinalgError,
    SingularMatrixError,
    frob_norm_sq,
    hermitian,
    identity,
    inverse,
    log2_det_hpd,
    solve,
)

__all__ = [
    "WmmseSettings",
    "LinkState",
    "CellProblem",
    "WmmseResult",
    "BracketError",
    "cell_problem",
    "init_precoders",
    "interference_plus_noise",
    "mmse_receiver",
    "mse_matrix",
    "mmse_mse",
    "weight_update",
    "user_rate",
    "update_receivers",
    "precoder_system",
    "precoder_update",
    "bisect_power",
    "weighted_sum_rate",
    "wmse_objective",
    "wmmse_solve",
]

LAMBDA_FLOOR = 1e-12
NULL_RTOL = 1e-12


class BracketError(LinalgError):
    """No multiplier bringing the power under budget was found."""


@dataclass(frozen=True)
class WmmseSettings:
    epsilon: float = 1e-4
    max_iterations: int = 100
    bisection_tolerance: float = 1e-10
    bisection_max_steps: int = 200

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.max_iterations < 1 or self.bisection_max_steps < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.bisection_tolerance > 0:
            raise ValueError("bisection_tolerance must be positive")


@dataclass
class LinkState:
    """Snapshot of one scheduled link."""

    user: int
    subcarrier: int
    band: str
    T: np.ndarray
    U: np.ndarray
    W: np.ndarray
    rate: float
    mu: float


@dataclass
class CellProblem:
    """All scheduled links of one base station.

    Arrays are indexed by link. ``H[l]`` is the own-cell channel of link
    `l`; ``H_cross[l]`` is the channel from the other base station to the
    same receiver on the same subcarrier (zero for dedicated links).
    """

    cell: int
    p_max: float
    noise_variance: float
    users: np.ndarray
    bands: np.ndarray
    subcarriers: np.ndarray
    H: np.ndarray
    H_cross: np.ndarray
    mu: np.ndarray
    T: np.ndarray
    U: np.ndarray = None
    W: np.ndarray = None
    rate: np.ndarray = None
    _same: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.users)
        nr, nt = self.H.shape[1:]
        a = self.T.shape[-1]
        if self.U is None:
            self.U = np.zeros((n, nr, a), dtype=np.complex128)
        if self.W is None:
            self.W = np.broadcast_to(identity(a), (n, a, a)).copy()
        if self.rate is None:
            self.rate = np.zeros(n)
        self.shared = np.asarray(self.bands) == SHARED
        same = (self.bands[:, None] == self.bands[None, :]) & (
            self.subcarriers[:, None] == self.subcarriers[None, :]
        )
        self._same = same
        # interference tag: shared subcarrier index, or a negative per-cell code
        self._slot = np.where(self.shared, self.subcarriers, -1 - self.subcarriers - (self.cell << 32)).astype(np.int64)

    @property
    def n_links(self) -> int:
        return len(self.users)

    @property
    def streams(self) -> int:
        return self.T.shape[-1]

    def co_schedule(self, include_self=True) -> np.ndarray:
        """``mask[l, m]`` is True when links l and m share a subcarrier."""
        if include_self:
            return self._same
        return self._same & ~np.eye(self.n_links, dtype=bool)

    def shared_peers(self, other: "CellProblem | None") -> np.ndarray:
        """``mask[l, b]``: link l of this cell and link b of `other` share a shared subcarrier."""
        if other is None:
            return np.zeros((self.n_links, 0), dtype=bool)
        return (
            self.shared[:, None]
            & other.shared[None, :]
            & (self.subcarriers[:, None] == other.subcarriers[None, :])
        )

    def power(self) -> float:
        return float(np.sum(frob_norm_sq(self.T))) if self.n_links else 0.0

    def link(self, i: int) -> LinkState:
        return LinkState(
            int(self.users[i]),
            int(self.subcarriers[i]),
            str(self.bands[i]),
            self.T[i],
            self.U[i],
            self.W[i],
            float(self.rate[i]),
            float(self.mu[i]),
        )

    def copy(self) -> "CellProblem":
        return replace(
            self,
            T=self.T.copy(),
            U=self.U.copy(),
            W=self.W.copy(),
            rate=self.rate.copy(),
        )


@dataclass
class WmmseResult:
    problems: list
    trace: list
    objective: list
    iterations: int
    converged: bool


def cell_problem(
    channels: ChannelSet,
    cell: int,
    links,
    p_max: float,
    weights=None,
    streams: int | None = None,
) -> CellProblem:
    """Collect the channels of the scheduled links of one cell.

    Parameters
    ----------
    links : iterable of (user, band, subcarrier)
        Typically ``Assignment.links()``.
    weights : sequence of float, optional
        Priority of every user of the cell, indexed by user; defaults to 1.
    streams : int, optional
        Data streams per link; defaults to the receive antenna count.
    """
    topo = channels.topology
    nr, nt = topo.rx_antennas[cell], topo.tx_antennas[cell]
    nt_other = topo.tx_antennas[1 - cell]
    a = nr if streams is None else int(streams)
    links = list(links)
    n = len(links)
    H = np.zeros((n, nr, nt), dtype=np.complex128)
    Hx = np.zeros((n, nr, nt_other), dtype=np.complex128)
    for i, (u, band, s) in enumerate(links):
        H[i] = channels.own(cell, band)[u, s]
        if band == SHARED:
            Hx[i] = channels.cross(cell)[u, s]
    users = np.array([u for u, _, _ in links], dtype=int)
    mu = np.ones(n) if weights is None else np.asarray(weights, dtype=float)[users]
    return CellProblem(
        cell=cell,
        p_max=float(p_max),
        noise_variance=channels.noise_variance,
        users=users,
        bands=np.array([b for _, b, _ in links], dtype=object).astype(str) if n else np.array([], dtype=str),
        subcarriers=np.array([s for _, _, s in links], dtype=int),
        H=H,
        H_cross=Hx,
        mu=mu,
        T=np.zeros((n, nt, a), dtype=np.complex128),
    )


def init_precoders(problem: CellProblem, rng: np.random.Generator) -> None:
    """Random Gaussian precoders, each with power ``p_max / #links``."""
    n = problem.n_links
    if n == 0:
        return
    shape = problem.T.shape
    z = rng.standard_normal((2,) + shape)
    T = z[0] + 1j * z[1]
    scale = np.sqrt(problem.p_max / n / frob_norm_sq(T))
    problem.T = T * scale[:, None, None]


_EMPTY_SLOT = np.zeros(0, dtype=np.int64)


def _coupling(other: "CellProblem | None", field_name: str):
    # arrays of the interfering cell, or empty stand-ins
    if other is None:
        z = np.zeros((0, 1, 1), dtype=np.complex128)
        return {"T": z, "H_cross": z, "U": z, "W": z, "mu": np.zeros(0), "_slot": _EMPTY_SLOT}[field_name]
    return getattr(other, field_name)


def interference_plus_noise(problem: CellProblem, other: CellProblem | None = None) -> np.ndarray:
    """Covariance of everything but the desired signal at each receiver.

    Intracell terms come from the links co-scheduled on the same subcarrier;
    on shared subcarriers the other base station's links on that subcarrier
    add intercell terms through ``H_cross``.
    """
    return _kernels.interference(
        problem.H,
        problem.H_cross,
        problem.T,
        problem._slot,
        _coupling(other, "T"),
        _coupling(other, "_slot"),
        float(problem.noise_variance),
    )


def mmse_receiver(H, T, J) -> np.ndarray:
    """``U = (H T T^H H^H + J)^{-1} H T``."""
    HT = H @ T
    return solve(HT @ hermitian(HT) + J, HT)


def mse_matrix(H, T, U, J, noise_variance: float) -> np.ndarray:
    """Error covariance of ``x - U^H y`` for an arbitrary receiver ``U``.

    ``J - sigma^2 I`` carries the interference covariance, so this is
    ``(I - U^H H T)(I - U^H H T)^H + U^H (J - sigma^2 I) U + sigma^2 U^H U``.
    """
    a = np.shape(T)[-1]
    nr = np.shape(J)[-1]
    D = identity(a) - hermitian(U) @ H @ T
    E = D @ hermitian(D) + hermitian(U) @ (J - noise_variance * identity(nr)) @ U
    E = E + noise_variance * hermitian(U) @ U
    return 0.5 * (E + hermitian(E))


def _snr_matrix(H, T, J) -> np.ndarray:
    HT = H @ T
    G = hermitian(HT) @ solve(J, HT)
    return identity(np.shape(T)[-1]) + 0.5 * (G + hermitian(G))


def mmse_mse(H, T, J) -> np.ndarray:
    """MSE at the MMSE receiver, ``(I + T^H H^H J^{-1} H T)^{-1}``."""
    E = inverse(_snr_matrix(H, T, J))
    return 0.5 * (E + hermitian(E))


def weight_update(E) -> np.ndarray:
    W = inverse(E)
    return 0.5 * (W + hermitian(W))


def user_rate(H, T, J):
    """``log2 det(I + T^H H^H J^{-1} H T)`` in bits/s/Hz."""
    return log2_det_hpd(_snr_matrix(H, T, J))


def _default_others(problems):
    return list(reversed(problems)) if len(problems) == 2 else [None] * len(problems)


def _refresh(problems, others) -> None:
    for p, o in zip(problems, others):
        if p.n_links == 0:
            continue
        J = interference_plus_noise(p, o)
        U, W, rate, bad = _kernels.receivers(p.H, p.T, J, PIVOT_RTOL)
        if bad >= 0:
            raise SingularMatrixError(f"cell {p.cell}, link {bad}: receiver or weight update is singular")
        p.U, p.W, p.rate = U, W, rate


def update_receivers(problems, others=None) -> None:
    """Refresh U, W and the rates of every link in `problems` in place.

    ``others[i]`` is the cell interfering with ``problems[i]`` on the shared
    band; by default the two problems interfere with each other.
    """
    _refresh(problems, _default_others(problems) if others is None else others)


def precoder_system(problem: CellProblem, other: CellProblem | None = None):
    """Matrices ``A`` and ``B`` with ``T(lambda) = (A + lambda I)^{-1} B`` per link.

    ``A[l]`` sums ``mu H^H U W U^H H`` over every receiver hearing link l's
    subcarrier from this base station: the co-scheduled links (including l)
    and, on shared subcarriers, the other cell's links there.
    ``B[l] = mu_l H_l^H U_l W_l``.
    """
    return _kernels.system(
        problem.H,
        problem.U,
        problem.W,
        problem.mu,
        problem._slot,
        _coupling(other, "H_cross"),
        _coupling(other, "U"),
        _coupling(other, "W"),
        _coupling(other, "mu"),
        _coupling(other, "_slot"),
    )


def precoder_update(problem: CellProblem, other: CellProblem | None, lam: float) -> np.ndarray:
    """Precoders minimizing the WMSE Lagrangian for multiplier `lam`."""
    if problem.n_links == 0:
        return problem.T.copy()
    A, B = precoder_system(problem, other)
    try:
        return solve(A + lam * identity(A.shape[-1]), B)
    except SingularMatrixError:
        if lam > LAMBDA_FLOOR:
            raise
    # lambda -> 0+ limit: B lies in the range of A, so drop A's null space
    d, V = np.linalg.eigh(A)
    null = d <= NULL_RTOL * np.maximum(d.max(axis=-1, keepdims=True), 0.0)
    d = np.where(null, np.inf, d)
    return V @ ((hermitian(V) @ B) / (d + lam)[..., None])


def _solve_multiplier(d, C, p_max, settings) -> float:
    num, dd = _kernels.power_terms(d, C)
    lam, ok = _kernels.bisect(num, dd, float(p_max), settings.bisection_tolerance, settings.bisection_max_steps)
    if not ok:
        raise BracketError(f"power still above budget at lambda={lam:g}")
    return float(lam)


def bisect_power(problem: CellProblem, other: CellProblem | None, settings: WmmseSettings) -> float:
    """Smallest multiplier meeting the power budget.

    Returns 0 when the unconstrained precoders already fit. Otherwise the
    upper end of ``[0, 1]`` is doubled until the power drops below budget,
    then the bracket is halved until the power sits within the tolerance
    below ``p_max``. The returned multiplier always yields a feasible power.

    The power ``sum ||T(lambda)||^2`` is evaluated in the eigenbasis of
    each ``A``, where it is a sum of ``|c|^2 / (d + lambda)^2`` terms.
    """
    if problem.n_links == 0:
        return 0.0
    A, B = precoder_system(problem, other)
    d, _, C = _kernels.eigen_system(A, B, NULL_RTOL)
    return _solve_multiplier(d, C, problem.p_max, settings)


def _precoder_step(problem, other, settings: WmmseSettings) -> np.ndarray:
    # bisection and precoder update sharing one eigen-decomposition
    A, B = precoder_system(problem, other)
    d, V, C = _kernels.eigen_system(A, B, NULL_RTOL)
    lam = _solve_multiplier(d, C, problem.p_max, settings)
    return _kernels.precoders(d, V, C, lam)


def weighted_sum_rate(problems) -> float:
    return float(sum(np.sum(p.mu * p.rate) for p in problems if p.n_links))


def wmse_objective(problems, others=None) -> float:
    """``sum mu [Tr(W E) - log2 det W]`` with E evaluated at the stored U."""
    others = _default_others(problems) if others is None else others
    total = 0.0
    for p, o in zip(problems, others):
        if p.n_links == 0:
            continue
        J = interference_plus_noise(p, o)
        E = mse_matrix(p.H, p.T, p.U, J, p.noise_variance)
        tr = np.trace(p.W @ E, axis1=-2, axis2=-1).real
        total += float(np.sum(p.mu * (tr - log2_det_hpd(p.W))))
    return total


def wmmse_solve(
    problems, settings: WmmseSettings = WmmseSettings(), track_objective: bool = False, callback=None
) -> WmmseResult:
    """Iterate receivers, weights and precoders until the rates settle.

    The two cells are updated in a fixed order (cell 0, then cell 1); before
    each cell's precoder step the receivers and weights of all links are
    refreshed at the current precoders, so every step lowers the joint WMSE
    objective and the weighted sum rate never decreases.

    ``trace[0]`` is the weighted sum rate at the initial precoders and
    ``trace[b]`` the value after iteration b. Iteration stops once no link's
    ``log2 det W`` moves by more than ``epsilon``, or after
    ``max_iterations``. With `track_objective` the WMSE objective after
    each iteration is recorded as well (it costs an extra MSE evaluation).
    ``callback(b, problems)``, if given, sees the state after every iteration.
    """
    problems = [p.copy() for p in problems]
    others = _default_others(problems)
    for p in problems:
        if p.p_max <= 0:
            p.T = np.zeros_like(p.T)

    _refresh(problems, others)
    trace = [weighted_sum_rate(problems)]
    objective = [wmse_objective(problems, others)] if track_objective else []
    previous = [p.rate.copy() for p in problems]
    converged = False
    iterations = 0

    for b in range(1, settings.max_iterations + 1):
        for i, p in enumerate(problems):
            if p.n_links == 0:
                continue
            if i > 0:
                _refresh(problems, others)
            p.T = _precoder_step(p, others[i], settings)
        _refresh(problems, others)
        iterations = b
        trace.append(weighted_sum_rate(problems))
        if callback is not None:
            callback(b, problems)
        if track_objective:
            objective.append(wmse_objective(problems, others))
        change = max(
            (float(np.max(np.abs(p.rate - q))) for p, q in zip(problems, previous) if p.n_links),
            default=0.0,
        )
        previous = [p.rate.copy() for p in problems]
        if change <= settings.epsilon:
            converged = True
            break

    return WmmseResult(problems, trace, objective, iterations, converged)
