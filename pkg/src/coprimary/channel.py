"""Seeded Rayleigh-fading channel realizations for the two-cell network."""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEDICATED",
    "SHARED",
    "Topology",
    "ChannelSet",
    "draw_rayleigh",
    "substream",
    "build_channel_set",
]

DEDICATED = "dedicated"
SHARED = "shared"
BANDS = (DEDICATED, SHARED)
_BAND_CODE = {DEDICATED: 0, SHARED: 1}
_CHANNEL_TAG = 0


@dataclass(frozen=True)
class Topology:
    """Antenna, user and subcarrier counts for both cells.

    Every per-cell field is a pair ``(cell 0, cell 1)``; the shared pool is
    common to both cells.
    """

    users_per_cell: tuple[int, int]
    tx_antennas: tuple[int, int] = (4, 4)
    rx_antennas: tuple[int, int] = (2, 2)
    dedicated_subcarriers: tuple[int, int] = (3, 3)
    shared_subcarriers: int = 0
    cells: int = field(default=2, init=False)

    def __post_init__(self):
        for name in ("users_per_cell", "tx_antennas", "rx_antennas", "dedicated_subcarriers"):
            pair = tuple(int(v) for v in getattr(self, name))
            if len(pair) != 2:
                raise ValueError(f"{name} needs one entry per cell, got {pair}")
            if min(pair) < 1:
                raise ValueError(f"{name} entries must be >= 1, got {pair}")
            object.__setattr__(self, name, pair)
        if self.shared_subcarriers < 0:
            raise ValueError("shared_subcarriers must be >= 0")
        for c in range(2):
            if self.users_per_cell[c] < self.tx_antennas[c]:
                raise ValueError(
                    f"cell {c}: {self.users_per_cell[c]} users but "
                    f"{self.tx_antennas[c]} transmit antennas; need users >= antennas"
                )

    @classmethod
    def symmetric(cls, users, dedicated, shared=0, tx=4, rx=2):
        return cls((users, users), (tx, tx), (rx, rx), (dedicated, dedicated), shared)

    def subcarriers(self, cell: int, band: str) -> int:
        return self.dedicated_subcarriers[cell] if band == DEDICATED else self.shared_subcarriers


@dataclass(frozen=True)
class ChannelSet:
    """Channel matrices of one Monte Carlo sample.

    Attributes
    ----------
    dedicated : list of arrays, one per cell
        ``dedicated[c][u, n]`` is the ``(N_R, N_T)`` channel from base
        station `c` to its user `u` on dedicated subcarrier `n`.
    shared : list of pairs of arrays, one pair per cell
        ``shared[c][b][u, p]`` is the channel from base station `b` to user
        `u` of cell `c` on shared subcarrier `p`. Both transmitters are
        stored because every shared subcarrier is reused by both cells.
    """

    topology: Topology
    noise_variance: float
    dedicated: list
    shared: list

    def matrix(self, cell: int, user: int, band: str, subcarrier: int, tx: int | None = None):
        if band == DEDICATED:
            if tx not in (None, cell):
                raise KeyError("dedicated subcarriers only carry the own base station")
            return self.dedicated[cell][user, subcarrier]
        tx = cell if tx is None else tx
        return self.shared[cell][tx][user, subcarrier]

    def own(self, cell: int, band: str) -> np.ndarray:
        """Own-base-station channels of a cell, shape ``(users, subcarriers, N_R, N_T)``."""
        if band == DEDICATED:
            return self.dedicated[cell]
        return self.shared[cell][cell]

    def cross(self, cell: int) -> np.ndarray:
        """Shared-band channels from the other base station to this cell's users."""
        return self.shared[cell][1 - cell]

    def keys(self):
        topo = self.topology
        for c in range(2):
            for u in range(topo.users_per_cell[c]):
                for n in range(topo.dedicated_subcarriers[c]):
                    yield (c, u, DEDICATED, n, c)
                for p in range(topo.shared_subcarriers):
                    for b in range(2):
                        yield (c, u, SHARED, p, b)

    def __len__(self):
        return sum(1 for _ in self.keys())


def draw_rayleigh(stream: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """I.i.d. CN(0, 1) entries: real and imaginary parts each N(0, 1/2)."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    z = stream.standard_normal((2, rows, cols))
    return (z[0] + 1j * z[1]) * np.sqrt(0.5)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by integers, not by draw order."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key)))


def build_channel_set(topo: Topology, noise_variance: float, master_seed: int, sample_index: int) -> ChannelSet:
    """Draw every channel matrix of one sample.

    Each matrix comes from its own substream keyed by
    ``(sample_index, cell, user, band, subcarrier, transmitter)``, so the
    result does not depend on the order in which matrices are generated.
    """
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")

    def draw(c, u, band, n, b):
        rng = substream(master_seed, _CHANNEL_TAG, sample_index, c, u, _BAND_CODE[band], n, b)
        return draw_rayleigh(rng, topo.rx_antennas[c], topo.tx_antennas[b])

    dedicated = []
    shared = []
    for c in range(2):
        users = topo.users_per_cell[c]
        nr = topo.rx_antennas[c]
        ded = np.empty((users, topo.dedicated_subcarriers[c], nr, topo.tx_antennas[c]), dtype=np.complex128)
        for u in range(users):
            for n in range(topo.dedicated_subcarriers[c]):
                ded[u, n] = draw(c, u, DEDICATED, n, c)
        dedicated.append(ded)
        per_tx = []
        for b in range(2):
            arr = np.empty((users, topo.shared_subcarriers, nr, topo.tx_antennas[b]), dtype=np.complex128)
            for u in range(users):
                for p in range(topo.shared_subcarriers):
                    arr[u, p] = draw(c, u, SHARED, p, b)
            per_tx.append(arr)
        shared.append(per_tx)
    return ChannelSet(topo, float(noise_variance), dedicated, shared)
