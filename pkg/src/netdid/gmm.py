"""Moment conditions and two-step GMM training of the bridge networks.

The outcome-bridge moment pairs the post-minus-pre outcome residual on the
control cell with the instrument stack [NCE ; neighbor-summed covariates];
the treatment-bridge moment balances the weighted control cell against the
treated cell with [NCO ; neighbor-summed covariates]. Step one minimizes the
quadratic form under an identity weight, step two under the inverse of the
estimated moment covariance.

The networks carry far more parameters than there are moment conditions, so
the bare quadratic form admits a continuum of wild interpolating solutions.
Training therefore adds a per-unit moment-variance term (the average of the
unit-level quadratic forms), which is the deterministic full-batch
counterpart of minibatched stochastic training on the same moments; its
weight is ``moment_variance_weight`` and setting it to zero recovers the
bare objective.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .dgp import PanelDataset
from .errors import EstimationError, NumericError
from .exposure import ExposureVector
from .graph import InterferenceGraph, NetworkGraph
from .nn import (
    AdamState,
    BridgeNet,
    PnaGraphContext,
    adam_step,
    init_params,
    pna_blocks,
    standardize_columns,
)

RIDGE_EPS = 1e-8
TRAJECTORY_EVERY = 50
MOMENT_VARIANCE_WEIGHT = 1.0 / 16.0


@dataclass(frozen=True)
class MomentContext:
    """Row-level ingredients of the moment vectors.

    For the direct effect each row is a unit. For the indirect effect each
    row is an interference pair (i, j): the indicator cells come from the
    source unit i, the instruments and bridge values from the outcome unit
    j, and ``unit_index`` maps rows to j.
    """

    target_g: float
    exposure: ExposureVector
    instruments_h: np.ndarray
    instruments_q: np.ndarray
    indicator_1g0: np.ndarray
    indicator_1g1: np.ndarray
    n_units: int
    unit_index: np.ndarray = None

    def __post_init__(self):
        if np.any(self.indicator_1g0 * self.indicator_1g1 != 0):
            raise ValueError("a row cannot sit in both indicator cells")

    @property
    def n_rows(self) -> int:
        return self.indicator_1g0.shape[0]

    @property
    def n_moments(self) -> int:
        return self.instruments_h.shape[1]

    def rows(self, unit_values: np.ndarray) -> np.ndarray:
        """Expand unit-level values to rows (identity for the direct effect)."""
        if self.unit_index is None:
            return unit_values
        return unit_values[self.unit_index]

    def rows_to_units(self, row_values: np.ndarray) -> np.ndarray:
        """Accumulate row-level gradients back onto units."""
        if self.unit_index is None:
            return row_values
        return np.bincount(self.unit_index, weights=row_values, minlength=self.n_units)


def neighbor_covariate_sums(ds: PanelDataset, g: NetworkGraph) -> np.ndarray:
    """Rows of the adjacency-covariate product on standardized covariates."""
    return g.adjacency.astype(np.float64) @ standardize_columns(ds.X)


def build_moment_context(
    ds: PanelDataset,
    g: NetworkGraph,
    exposure: ExposureVector,
    target_g: float,
    instrument_intercept: bool = False,
) -> MomentContext:
    """Unit-level context for the direct-effect moments at one exposure level."""
    ax = neighbor_covariate_sums(ds, g)
    cols_h = [ds.Z[:, None], ax]
    cols_q = [ds.W[:, None], ax]
    if instrument_intercept:
        ones = np.ones((ds.n, 1))
        cols_h.append(ones)
        cols_q.append(ones)
    at_g = exposure.values == target_g
    return MomentContext(
        target_g=target_g,
        exposure=exposure,
        instruments_h=np.hstack(cols_h),
        instruments_q=np.hstack(cols_q),
        indicator_1g0=(at_g & (ds.D == 0)).astype(np.float64),
        indicator_1g1=(at_g & (ds.D == 1)).astype(np.float64),
        n_units=ds.n,
    )


def build_ait_moment_context(
    ds: PanelDataset,
    g: NetworkGraph,
    interference: InterferenceGraph,
    instrument_intercept: bool = False,
) -> MomentContext:
    """Pair-level context for the indirect-effect moments.

    Rows enumerate (i, j) with j in the interference set of i; the treated
    and control cells are D_i = 1 and D_i = 0.
    """
    src, dst = interference.pairs()
    if src.size == 0:
        raise EstimationError("interference graph has no pairs")
    ax = neighbor_covariate_sums(ds, g)
    cols_h = [ds.Z[dst][:, None], ax[dst]]
    cols_q = [ds.W[dst][:, None], ax[dst]]
    if instrument_intercept:
        ones = np.ones((src.size, 1))
        cols_h.append(ones)
        cols_q.append(ones)
    return MomentContext(
        target_g=float("nan"),
        exposure=None,
        instruments_h=np.hstack(cols_h),
        instruments_q=np.hstack(cols_q),
        indicator_1g0=(1.0 - ds.D[src]),
        indicator_1g1=ds.D[src].astype(np.float64),
        n_units=ds.n,
        unit_index=dst,
    )


def moment_h(ctx: MomentContext, h_vals: np.ndarray, dY: np.ndarray) -> np.ndarray:
    """Sample average of the outcome-bridge moments."""
    r = (ctx.rows(dY) - ctx.rows(h_vals)) * ctx.indicator_1g0
    return ctx.instruments_h.T @ r / ctx.n_rows


def moment_q(ctx: MomentContext, q_vals: np.ndarray) -> np.ndarray:
    """Sample average of the treatment-bridge moments."""
    r = ctx.rows(q_vals) * ctx.indicator_1g0 - ctx.indicator_1g1
    return ctx.instruments_q.T @ r / ctx.n_rows


def per_row_moments_h(ctx, h_vals, dY) -> np.ndarray:
    r = (ctx.rows(dY) - ctx.rows(h_vals)) * ctx.indicator_1g0
    return ctx.instruments_h * r[:, None]


def per_row_moments_q(ctx, q_vals) -> np.ndarray:
    r = ctx.rows(q_vals) * ctx.indicator_1g0 - ctx.indicator_1g1
    return ctx.instruments_q * r[:, None]


def gmm_objective(m: np.ndarray, omega: np.ndarray) -> float:
    """Quadratic form m' Omega m under a positive-definite weight."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (m.shape[0], m.shape[0]):
        raise ValueError("weight matrix dimension does not match the moment vector")
    if not np.allclose(omega, omega.T):
        raise ValueError("weight matrix must be symmetric")
    eigmin = np.linalg.eigvalsh(omega)[0]
    if eigmin <= 0:
        raise ValueError("weight matrix must be positive definite")
    return float(m @ omega @ m)


def optimal_weight(residual_moments: np.ndarray):
    """Outer-product moment covariance and its ridge-stabilized inverse.

    Returns
    -------
    (Lambda, Omega) : Lambda is the average outer product of the per-row
    moments; Omega inverts Lambda plus a trace-scaled ridge.
    """
    M = np.asarray(residual_moments, dtype=np.float64)
    n, k = M.shape
    Lambda = M.T @ M / n
    scale = float(np.trace(Lambda)) / k
    if scale <= 0:
        scale = 1.0
    try:
        omega = np.linalg.inv(Lambda + RIDGE_EPS * scale * np.eye(k))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"moment covariance is singular even after ridge: {exc}")
    if not np.isfinite(omega).all():
        raise ValueError("moment covariance inversion produced non-finite weights")
    return Lambda, 0.5 * (omega + omega.T)


@dataclass
class GmmFit:
    """Result of one two-step bridge fit."""

    which: str
    params: np.ndarray
    step1_objective: float
    step1_objective_optimal: float
    step2_objective: float
    Lambda: np.ndarray
    omega: np.ndarray
    epochs: int
    seed: int
    converged: bool
    moment_variance_weight: float = 0.0
    trajectory_step1: list = field(default_factory=list)
    trajectory_step2: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "which": self.which,
            "step1_objective": self.step1_objective,
            "step1_objective_optimal": self.step1_objective_optimal,
            "step2_objective": self.step2_objective,
            "lambda": self.Lambda.tolist(),
            "epochs": self.epochs,
            "seed": self.seed,
            "converged": self.converged,
            "moment_variance_weight": self.moment_variance_weight,
            "trajectory_step1": self.trajectory_step1,
            "trajectory_step2": self.trajectory_step2,
        }
        return json.dumps(payload, sort_keys=True)


def _make_loss(ctx: MomentContext, which: str, dY, omega, variance_weight=0.0):
    if which == "h":
        U = ctx.instruments_h
        dY_rows = ctx.rows(dY)
    else:
        U = ctx.instruments_q
    g0 = ctx.indicator_1g0
    g1 = ctx.indicator_1g1
    n_rows = ctx.n_rows
    # u_i' Omega u_i, the per-row weight of the moment-variance term
    uou = np.einsum("ij,jk,ik->i", U, omega, U) if variance_weight else None

    def loss(h_vals, q_vals):
        if which == "h":
            r = (dY_rows - ctx.rows(h_vals)) * g0
        else:
            r = ctx.rows(q_vals) * g0 - g1
        m = U.T @ r / n_rows
        om = omega @ m
        value = float(m @ om)
        d_r = (2.0 / n_rows) * (U @ om)
        if variance_weight:
            value += variance_weight * float(np.mean(r * r * uou))
            d_r = d_r + variance_weight * (2.0 / n_rows) * r * uou
        if which == "h":
            d_h = ctx.rows_to_units(-g0 * d_r)
            d_q = np.zeros(ctx.n_units)
        else:
            d_h = np.zeros(ctx.n_units)
            d_q = ctx.rows_to_units(g0 * d_r)
        return value, d_h, d_q

    return loss


def _run_adam(net, theta0, features, gctx, w, z, loss, epochs, learning_rate, first_blocks):
    theta = theta0
    state = AdamState(net.n_params, learning_rate=learning_rate)
    best_value = np.inf
    best_theta = theta0
    trajectory = []
    for epoch in range(epochs):
        try:
            value, grad = net.value_and_grad(
                theta, features, gctx, w, z, loss, first_blocks=first_blocks
            )
        except NumericError as exc:
            raise NumericError(f"{exc} (epoch {epoch})")
        if value < best_value:
            best_value = value
            best_theta = theta.copy()
        if epoch % TRAJECTORY_EVERY == 0:
            trajectory.append(float(value))
        theta = adam_step(state, theta, grad)
    h_vals, q_vals = net.forward(theta, features, gctx, w, z, first_blocks=first_blocks)
    final_value = loss(h_vals, q_vals)[0]
    trajectory.append(float(final_value))
    if final_value < best_value:
        best_value = final_value
        best_theta = theta
    return best_theta, float(best_value), trajectory


def fit_bridge(
    net: BridgeNet,
    ds: PanelDataset,
    g: NetworkGraph,
    ctx: MomentContext,
    which: str,
    epochs: int = 500,
    seed: int = 0,
    learning_rate: float = 0.01,
    moment_variance_weight: float = MOMENT_VARIANCE_WEIGHT,
    init: np.ndarray = None,
) -> GmmFit:
    """Two-step GMM fit of one bridge head.

    Step one trains under an identity weight for ``epochs`` full-batch Adam
    steps; the per-row moments of the step-one fit give the optimal weight,
    under which step two retrains for another ``epochs`` steps warm-started
    from step one. Each step keeps its best-objective iterate, so the final
    fit never degrades the warm start. ``init`` overrides the seeded
    initialization. ``moment_variance_weight`` scales the well-posedness
    term described in the module docstring.
    """
    which = which.lower()
    if which not in ("h", "q"):
        raise ValueError(f"which must be 'h' or 'q', got {which!r}")
    if ctx.indicator_1g0.sum() == 0:
        raise EstimationError("control cell (d=0 at the target exposure) is empty")
    if which == "q" and ctx.indicator_1g1.sum() == 0:
        raise EstimationError("treated cell (d=1 at the target exposure) is empty")

    features = standardize_columns(ds.X)
    gctx = PnaGraphContext.from_graph(g)
    first_blocks = pna_blocks(gctx, features) if net.depth >= 1 else None
    k = ctx.n_moments
    theta0 = init_params(net, seed) if init is None else np.asarray(init, dtype=np.float64)

    identity = np.eye(k)
    loss1 = _make_loss(ctx, which, ds.dY, identity, moment_variance_weight)
    theta1, obj1, traj1 = _run_adam(
        net, theta0, features, gctx, ds.W, ds.Z, loss1, epochs, learning_rate, first_blocks
    )

    h1, q1 = net.forward(theta1, features, gctx, ds.W, ds.Z, first_blocks=first_blocks)
    if which == "h":
        residual_moments = per_row_moments_h(ctx, h1, ds.dY)
    else:
        residual_moments = per_row_moments_q(ctx, q1)
    Lambda, omega = optimal_weight(residual_moments)

    loss2 = _make_loss(ctx, which, ds.dY, omega, moment_variance_weight)
    obj1_optimal = loss2(h1, q1)[0]
    theta2, obj2, traj2 = _run_adam(
        net, theta1, features, gctx, ds.W, ds.Z, loss2, epochs, learning_rate, first_blocks
    )

    return GmmFit(
        which=which,
        params=theta2,
        step1_objective=obj1,
        step1_objective_optimal=float(obj1_optimal),
        step2_objective=obj2,
        Lambda=Lambda,
        omega=omega,
        epochs=epochs,
        seed=seed,
        converged=bool(np.isfinite(obj2) and obj2 <= obj1_optimal),
        moment_variance_weight=moment_variance_weight,
        trajectory_step1=traj1,
        trajectory_step2=traj2,
    )
