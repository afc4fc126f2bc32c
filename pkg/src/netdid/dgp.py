"""Synthetic panel generator for Monte Carlo studies.

Draws an Erdos-Renyi network, a 15-dimensional Gaussian covariate vector per
unit split into 10 observed and 5 latent columns, and builds the negative
controls, treatment and two-period outcomes from fixed linear indices in own
and neighbor-averaged covariates. The direct treatment effect on the second
period outcome equals ``tau`` by construction.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EstimationError
from .graph import NetworkGraph, _erdos_renyi_rng

_BETA_X = (0.1, 0.5, 0.5**2, 0.5**3, 0.5**4, 0.0, 0.0, 0.0, 0.0, 0.0)
_BETA_U = (0.1, 0.5, 0.5**2, 0.0, 0.0)


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; defaults reproduce the benchmark protocol."""

    n: int
    p_edge: float = 0.5
    tau: float = 0.5
    d_obs: int = 10
    d_lat: int = 5
    beta_X: tuple = _BETA_X
    beta_U: tuple = _BETA_U
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 units, got n={self.n}")
        if self.noise_sd <= 0:
            raise ValueError("noise standard deviation must be positive")
        if len(self.beta_X) != self.d_obs:
            raise ValueError("beta_X length must match d_obs")
        if len(self.beta_U) != self.d_lat:
            raise ValueError("beta_U length must match d_lat")

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class PanelDataset:
    """Two-period panel with negative controls.

    D is the period-1 treatment, Y0/Y1 the period outcomes, dY their
    difference, X the observed covariates, W the negative control outcome
    and Z the negative control exposure. U and true_tau are present only
    for simulated data.
    """

    D: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    dY: np.ndarray
    X: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    U: np.ndarray = None
    true_tau: float = None

    def __post_init__(self):
        n = self.D.shape[0]
        if n < 2:
            raise ValueError(f"a panel needs at least 2 units, got {n}")
        for name in ("Y0", "Y1", "dY", "W", "Z"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValueError(f"X must have {n} rows, got shape {self.X.shape}")
        if not np.isin(self.D, (0, 1)).all():
            raise ValueError("D must be binary")
        if not np.array_equal(self.dY, self.Y1 - self.Y0):
            raise ValueError("dY must equal Y1 - Y0 exactly")
        for name in ("D", "Y0", "Y1", "dY", "X", "W", "Z", "U"):
            v = getattr(self, name)
            if v is not None:
                v.flags.writeable = False

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @classmethod
    def from_arrays(cls, D, Y0, Y1, X, W, Z, U=None, true_tau=None) -> "PanelDataset":
        D = np.asarray(D, dtype=np.float64)
        Y0 = np.asarray(Y0, dtype=np.float64)
        Y1 = np.asarray(Y1, dtype=np.float64)
        return cls(
            D=D,
            Y0=Y0,
            Y1=Y1,
            dY=Y1 - Y0,
            X=np.asarray(X, dtype=np.float64),
            W=np.asarray(W, dtype=np.float64),
            Z=np.asarray(Z, dtype=np.float64),
            U=None if U is None else np.asarray(U, dtype=np.float64),
            true_tau=true_tau,
        )


def neighbor_mean(v, g: NetworkGraph) -> np.ndarray:
    """Average of v over each unit's direct neighbors, 0 for isolated units."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != g.n:
        raise ValueError(f"vector length {v.shape[0]} does not match n={g.n}")
    s = g.adjacency.astype(np.float64) @ v
    deg = g.degrees.astype(np.float64)
    if v.ndim == 1:
        return np.divide(s, deg, out=np.zeros_like(s), where=deg > 0)
    return np.divide(s, deg[:, None], out=np.zeros_like(s), where=deg[:, None] > 0)


def simulate(cfg: SimConfig):
    """Generate one (graph, panel) replication.

    The RNG stream is consumed in a fixed order (graph, covariates, then the
    three noise vectors) so upstream draws are unchanged when only downstream
    settings differ.

    Returns
    -------
    (NetworkGraph, PanelDataset)
    """
    rng = np.random.default_rng(cfg.seed)
    g = _erdos_renyi_rng(cfg.n, cfg.p_edge, rng)

    XU = rng.standard_normal((cfg.n, cfg.d_obs + cfg.d_lat))
    X = XU[:, : cfg.d_obs]
    U = XU[:, cfg.d_obs :]

    e = rng.normal(0.0, cfg.noise_sd, cfg.n)
    eta = rng.normal(0.0, cfg.noise_sd, cfg.n)
    theta = rng.normal(0.0, cfg.noise_sd, cfg.n)

    bX = np.asarray(cfg.beta_X)
    bU = np.asarray(cfg.beta_U)
    xb = X @ bX
    ub = U @ bU
    nm_u1 = neighbor_mean(U[:, 0], g)
    nm_x1 = neighbor_mean(X[:, 0], g)
    nm_e = neighbor_mean(e, g)

    Z = 0.1 + 0.7 * nm_u1 + 0.3 * nm_x1 + 0.2 * xb + 0.3 * ub + eta
    W = 0.1 + 0.9 * nm_u1 + 0.7 * nm_x1 + 0.3 * xb + 0.4 * ub + theta
    D = (0.1 + 0.8 * nm_u1 + 0.5 * nm_x1 + 0.4 * xb + 0.5 * ub + nm_e + e > 0).astype(
        np.float64
    )
    Y0 = 0.1 + 0.6 * nm_u1 + 0.4 * nm_x1 + 0.5 * xb + 0.6 * ub + nm_e + e
    Y1 = (
        Y0
        + cfg.tau * D
        + 0.2 * nm_u1**2
        + 0.2 * nm_x1**2
        + 0.5 * neighbor_mean(D, g)
        + 0.2 * xb
        + 0.3 * ub
        + 0.3 * W
    )

    ds = PanelDataset(
        D=D, Y0=Y0, Y1=Y1, dY=Y1 - Y0, X=X, W=W, Z=Z, U=U, true_tau=cfg.tau
    )
    return g, ds


def oracle_adt(ds: PanelDataset) -> float:
    """Ground-truth direct effect of a simulated panel."""
    if ds.true_tau is None:
        raise EstimationError("dataset was not simulated; no ground-truth effect")
    return float(ds.true_tau)
