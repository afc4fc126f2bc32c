"""Doubly robust effect estimates, network HAC inference, the spillover OLS
baseline and the Monte Carlo harness.

The direct-effect estimator reweights outcome-bridge residuals by the
treated-cell share and the treatment bridge; its variance comes from a
network HAC sum of centered influence terms truncated at the bandwidth
chosen from average degree and path length.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from .dgp import PanelDataset, SimConfig, oracle_adt, simulate
from .errors import EstimationError, NumericError
from .exposure import ANY_TREATED, ExposureSpec, ExposureVector, compute_exposure
from .gmm import (
    MOMENT_VARIANCE_WEIGHT,
    build_ait_moment_context,
    build_moment_context,
    fit_bridge,
)
from .graph import (
    DistanceMatrix,
    InterferenceGraph,
    NetworkGraph,
    bfs_distances,
    graph_stats,
    hac_bandwidth,
    interference_sets,
)
from .nn import BridgeNet, bridge_forward


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# point estimators


def _cells(exposure: ExposureVector, target_g: float, D: np.ndarray):
    at_g = exposure.values == target_g
    g1 = (at_g & (D == 1)).astype(np.float64)
    g0 = (at_g & (D == 0)).astype(np.float64)
    return g1, g0


def estimate_adt_dr(ds, g, exposure, target_g, h_vals, q_vals) -> float:
    """Doubly robust direct effect at one exposure level."""
    return float(adt_contributions(ds, exposure, target_g, h_vals, q_vals).mean())


def adt_contributions(ds, exposure, target_g, h_vals, q_vals) -> np.ndarray:
    """Per-unit contributions whose mean is the direct-effect estimate."""
    g1, g0 = _cells(exposure, target_g, ds.D)
    ehat = g1.mean()
    if ehat == 0:
        raise EstimationError(
            f"no treated units at exposure level g={target_g}; cannot estimate"
        )
    return (g1 / ehat - q_vals * g0 / ehat) * (ds.dY - h_vals)


def estimate_ait_dr(ds, g, interference: InterferenceGraph, h2_vals, q2_vals) -> float:
    """Doubly robust indirect effect over the interference sets."""
    return float(ait_contributions(ds, interference, h2_vals, q2_vals).mean())


def ait_contributions(ds, interference, h2_vals, q2_vals) -> np.ndarray:
    """Per-source-unit sums whose mean is the indirect-effect estimate."""
    ehat = ds.D.mean()
    if ehat == 0:
        raise EstimationError("no treated units; cannot estimate the indirect effect")
    src, dst = interference.pairs()
    pair_terms = (
        ds.D[src] / ehat - q2_vals[dst] * (1.0 - ds.D[src]) / ehat
    ) * (ds.dY[dst] - h2_vals[dst])
    return np.bincount(src, weights=pair_terms, minlength=ds.n)


# ---------------------------------------------------------------------------
# inference


def hac_quadratic_form(residual_terms, d: DistanceMatrix, b_n: int) -> float:
    """Un-truncated HAC double sum over pairs within path distance b_n."""
    if b_n < 0:
        raise ValueError(f"bandwidth must be nonnegative, got {b_n}")
    t = np.asarray(residual_terms, dtype=np.float64)
    mask = (d.dist <= b_n).astype(np.float64)
    return float(t @ (mask @ t)) / t.shape[0]


def hac_variance(residual_terms, d: DistanceMatrix, b_n: int) -> float:
    """HAC variance of the scaled estimator, truncated at zero."""
    return max(hac_quadratic_form(residual_terms, d, b_n), 0.0)


def infer(point: float, sigma2: float, n: int):
    """Standard error, z statistic and two-sided normal p-value.

    sigma2 is the HAC variance of the root-n scaled estimator, so the
    standard error is sqrt(sigma2 / n).
    """
    if sigma2 < 0:
        raise ValueError("variance must be nonnegative")
    se = math.sqrt(sigma2 / n)
    if se == 0.0:
        raise EstimationError("zero standard error; inference undefined")
    z = point / se
    return se, z, two_sided_p(z)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EstimateReport:
    """Point estimate with network HAC inference and fit diagnostics."""

    estimand: str
    point: float
    n: int
    target_g: float = None
    interference_radius: int = None
    hac_se: float = None
    bandwidth_bn: int = None
    z_stat: float = None
    p_value: float = None
    cell_counts: tuple = None
    hac_clamped: bool = False
    avg_degree: float = None
    avg_path_length: float = None
    nuisance: dict = field(default_factory=dict)
    seed: int = None

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["cell_counts"] = None if self.cell_counts is None else list(self.cell_counts)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        rows = [
            ("Estimate", f"{self.point:.4f}"),
            ("SE", "" if self.hac_se is None else f"{self.hac_se:.4f}"),
            ("Sample size", str(self.n)),
            ("b_n", "" if self.bandwidth_bn is None else str(self.bandwidth_bn)),
            ("P-value", "" if self.p_value is None else f"{self.p_value:.4f}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)


@dataclass
class BaselineFit:
    """OLS fit of the spillover regression."""

    coefficients: np.ndarray
    se: np.ndarray
    residuals: np.ndarray
    column_names: list
    n: int

    @property
    def alpha(self) -> float:
        return float(self.coefficients[0])

    @property
    def tau(self) -> float:
        return float(self.coefficients[1])

    @property
    def tau_se(self) -> float:
        return float(self.se[1])

    @property
    def delta(self) -> float:
        return float(self.coefficients[2])

    @property
    def beta(self) -> np.ndarray:
        d = (len(self.column_names) - 3) // 2
        return self.coefficients[3 : 3 + d]

    @property
    def gamma(self) -> np.ndarray:
        d = (len(self.column_names) - 3) // 2
        return self.coefficients[3 + d :]


# ---------------------------------------------------------------------------
# baseline OLS


def _baseline_design(ds: PanelDataset, g: NetworkGraph):
    from .dgp import neighbor_mean

    d = ds.X.shape[1]
    frac = compute_exposure(
        ExposureSpec("fraction_treated"), ds.D, g
    ).values
    design = np.column_stack(
        [np.ones(ds.n), ds.D, frac, ds.X, neighbor_mean(ds.X, g)]
    )
    names = (
        ["intercept", "D", "frac_treated"]
        + [f"x{j + 1}" for j in range(d)]
        + [f"nbr_x{j + 1}" for j in range(d)]
    )
    return design, names


def ols_baseline(ds: PanelDataset, g: NetworkGraph) -> BaselineFit:
    """Spillover OLS of the outcome difference on own treatment, treated
    neighbor fraction, own covariates and neighbor-mean covariates."""
    design, names = _baseline_design(ds, g)
    n, k = design.shape
    rank = np.linalg.matrix_rank(design)
    if rank < k:
        _, _, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
        bad = sorted(names[j] for j in piv[rank:])
        raise ValueError(f"design matrix is rank deficient; collinear columns: {bad}")
    coef, _, _, _ = np.linalg.lstsq(design, ds.dY, rcond=None)
    resid = ds.dY - design @ coef
    sigma2 = float(resid @ resid) / (n - k)
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return BaselineFit(
        coefficients=coef,
        se=np.sqrt(np.diag(cov)),
        residuals=resid,
        column_names=names,
        n=n,
    )


# ---------------------------------------------------------------------------
# full pipelines


def _derive_net_seeds(seed: int):
    state = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def _inference_block(report, contributions, point, g, dist):
    if dist is None:
        dist = bfs_distances(g)
    avg_degree, avg_path_length = graph_stats(g, dist)
    b_n = hac_bandwidth(g.n, avg_degree, avg_path_length)
    raw = hac_quadratic_form(contributions - point, dist, b_n)
    sigma2 = max(raw, 0.0)
    report.bandwidth_bn = b_n
    report.avg_degree = avg_degree
    report.avg_path_length = avg_path_length
    report.hac_clamped = raw < 0
    if sigma2 > 0:
        se, z, p = infer(point, sigma2, g.n)
        report.hac_se = se
        report.z_stat = z
        report.p_value = p
    else:
        report.hac_se = 0.0
    return report


def estimate_adt(
    ds: PanelDataset,
    g: NetworkGraph,
    spec: ExposureSpec = ExposureSpec(ANY_TREATED),
    target_g: float = 1.0,
    epochs: int = 500,
    learning_rate: float = 0.01,
    hidden_dim: int = 16,
    embed_dim: int = 16,
    depth: int = 1,
    seed: int = 0,
    positive_q: bool = False,
    instrument_intercept: bool = False,
    moment_variance_weight: float = MOMENT_VARIANCE_WEIGHT,
    inference: bool = True,
    dist: DistanceMatrix = None,
) -> EstimateReport:
    """Fit both bridges by two-step GMM and report the direct effect."""
    exposure = compute_exposure(spec, ds.D, g)
    ctx = build_moment_context(
        ds, g, exposure, target_g, instrument_intercept=instrument_intercept
    )
    net = BridgeNet(
        in_dim=ds.X.shape[1],
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        depth=depth,
        positive_q=positive_q,
    )
    seed_h, seed_q = _derive_net_seeds(seed)
    fit_h = fit_bridge(net, ds, g, ctx, "h", epochs=epochs, seed=seed_h,
                       learning_rate=learning_rate,
                       moment_variance_weight=moment_variance_weight)
    fit_q = fit_bridge(net, ds, g, ctx, "q", epochs=epochs, seed=seed_q,
                       learning_rate=learning_rate,
                       moment_variance_weight=moment_variance_weight)
    h_vals, _ = bridge_forward(net, ds, g, fit_h.params)
    _, q_vals = bridge_forward(net, ds, g, fit_q.params)

    contributions = adt_contributions(ds, exposure, target_g, h_vals, q_vals)
    point = float(contributions.mean())
    report = EstimateReport(
        estimand="adt",
        point=point,
        n=ds.n,
        target_g=target_g,
        cell_counts=(int(ctx.indicator_1g1.sum()), int(ctx.indicator_1g0.sum())),
        nuisance={
            "h_step1_objective": fit_h.step1_objective,
            "h_step2_objective": fit_h.step2_objective,
            "q_step1_objective": fit_q.step1_objective,
            "q_step2_objective": fit_q.step2_objective,
            "q_range": [float(q_vals.min()), float(q_vals.max())],
        },
        seed=seed,
    )
    if inference:
        _inference_block(report, contributions, point, g, dist)
    return report


def estimate_ait(
    ds: PanelDataset,
    g: NetworkGraph,
    K: int = 1,
    epochs: int = 500,
    learning_rate: float = 0.01,
    hidden_dim: int = 16,
    embed_dim: int = 16,
    depth: int = 1,
    seed: int = 0,
    positive_q: bool = False,
    instrument_intercept: bool = False,
    moment_variance_weight: float = MOMENT_VARIANCE_WEIGHT,
    inference: bool = True,
    dist: DistanceMatrix = None,
) -> EstimateReport:
    """Fit pair-level bridges and report the indirect effect within radius K."""
    if dist is None:
        dist = bfs_distances(g)
    interference = interference_sets(g, dist, K)
    ctx = build_ait_moment_context(
        ds, g, interference, instrument_intercept=instrument_intercept
    )
    net = BridgeNet(
        in_dim=ds.X.shape[1],
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        depth=depth,
        positive_q=positive_q,
    )
    seed_h, seed_q = _derive_net_seeds(seed)
    fit_h = fit_bridge(net, ds, g, ctx, "h", epochs=epochs, seed=seed_h,
                       learning_rate=learning_rate,
                       moment_variance_weight=moment_variance_weight)
    fit_q = fit_bridge(net, ds, g, ctx, "q", epochs=epochs, seed=seed_q,
                       learning_rate=learning_rate,
                       moment_variance_weight=moment_variance_weight)
    h_vals, _ = bridge_forward(net, ds, g, fit_h.params)
    _, q_vals = bridge_forward(net, ds, g, fit_q.params)

    contributions = ait_contributions(ds, interference, h_vals, q_vals)
    point = float(contributions.mean())
    report = EstimateReport(
        estimand="ait",
        point=point,
        n=ds.n,
        interference_radius=K,
        cell_counts=(int(ds.D.sum()), int(ds.n - ds.D.sum())),
        nuisance={
            "h_step1_objective": fit_h.step1_objective,
            "h_step2_objective": fit_h.step2_objective,
            "q_step1_objective": fit_q.step1_objective,
            "q_step2_objective": fit_q.step2_objective,
            "q_range": [float(q_vals.min()), float(q_vals.max())],
        },
        seed=seed,
    )
    if inference:
        _inference_block(report, contributions, point, g, dist)
    return report


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloSummary:
    """Across-replication summary of a simulation study."""

    estimator: str
    n: int
    reps_requested: int
    true_tau: float
    estimates: list
    ses: list = None
    bandwidths: list = None
    failures: int = 0

    @property
    def reps(self) -> int:
        return len(self.estimates)

    @property
    def mean_estimate(self) -> float:
        return float(np.mean(self.estimates))

    @property
    def sd(self) -> float:
        return float(np.std(self.estimates, ddof=1))

    @property
    def bias(self) -> float:
        return self.mean_estimate - self.true_tau

    @property
    def rmse(self) -> float:
        return float(math.sqrt(self.bias**2 + self.sd**2))

    @property
    def rmse_se(self) -> float:
        """Delta-method Monte Carlo standard error of the RMSE."""
        errs = np.asarray(self.estimates) - self.true_tau
        sq = errs**2
        mse = sq.mean()
        if mse == 0:
            return 0.0
        return float(np.std(sq, ddof=1) / math.sqrt(len(sq)) / (2.0 * math.sqrt(mse)))

    @property
    def coverage(self):
        """Share of 95% normal intervals covering the true effect."""
        if self.ses is None:
            return None
        est = np.asarray(self.estimates)
        se = np.asarray(self.ses)
        ok = se > 0
        lo = est - 1.96 * se
        hi = est + 1.96 * se
        return float(np.mean(ok & (lo <= self.true_tau) & (self.true_tau <= hi)))

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "n": self.n,
            "reps_requested": self.reps_requested,
            "reps_completed": self.reps,
            "failures": self.failures,
            "true_tau": self.true_tau,
            "mean_estimate": self.mean_estimate,
            "sd": self.sd,
            "bias": self.bias,
            "rmse": self.rmse,
            "rmse_se": self.rmse_se,
            "coverage": self.coverage,
            "estimates": list(self.estimates),
            "ses": None if self.ses is None else list(self.ses),
            "bandwidths": None if self.bandwidths is None else list(self.bandwidths),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        rows = [
            ("Estimate", f"{self.mean_estimate:.4f}"),
            ("SE", f"{self.sd:.4f}"),
            ("Bias", f"{self.bias:.4f}"),
            ("RMSE", f"{self.rmse:.4f}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)


def _mc_replication(args):
    cfg, rep, estimator, options = args
    try:
        rep_cfg = cfg.with_seed(cfg.seed + rep)
        g, ds = simulate(rep_cfg)
        if estimator == "oracle":
            return rep, oracle_adt(ds), None, None
        if estimator == "baseline":
            return rep, ols_baseline(ds, g).tau, None, None
        report = estimate_adt(ds, g, seed=rep_cfg.seed, **options)
        return rep, report.point, report.hac_se, report.bandwidth_bn
    except (EstimationError, NumericError, ValueError, ArithmeticError):
        return None


def monte_carlo(
    cfg: SimConfig,
    reps: int,
    estimator: str = "dr",
    jobs: int = 1,
    **options,
) -> MonteCarloSummary:
    """Replicate simulate-then-estimate with seeds cfg.seed + rep index.

    Failed replications are dropped and counted. Extra keyword options are
    forwarded to the doubly robust estimator.
    """
    if reps < 2:
        raise ValueError(f"need at least 2 replications, got {reps}")
    if estimator not in ("dr", "baseline", "oracle"):
        raise ValueError(f"unknown estimator {estimator!r}")
    tasks = [(cfg, rep, estimator, options) for rep in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_mc_replication, tasks))
    else:
        results = [_mc_replication(task) for task in tasks]
    kept = sorted(r for r in results if r is not None)
    estimates = [r[1] for r in kept]
    ses = [r[2] for r in kept]
    bns = [r[3] for r in kept]
    with_inference = estimator == "dr" and options.get("inference", True)
    return MonteCarloSummary(
        estimator=estimator,
        n=cfg.n,
        reps_requested=reps,
        true_tau=cfg.tau,
        estimates=estimates,
        ses=ses if with_inference else None,
        bandwidths=bns if with_inference else None,
        failures=reps - len(kept),
    )


# ---------------------------------------------------------------------------
# estimator API


def check_panel_graph(ds: PanelDataset, g: NetworkGraph):
    """Validate that a dataset and a graph describe the same units."""
    if not isinstance(ds, PanelDataset):
        raise ValueError(f"expected a PanelDataset, got {type(ds).__name__}")
    if not isinstance(g, NetworkGraph):
        raise ValueError(f"expected a NetworkGraph, got {type(g).__name__}")
    if ds.n != g.n:
        raise ValueError(f"dataset has {ds.n} units but graph has {g.n}")
    return ds, g


class _FittedMixin:
    def _require_fitted(self):
        if not hasattr(self, "effect_"):
            raise RuntimeError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )


class DoublyRobustDid(BaseEstimator, _FittedMixin):
    """Doubly robust network difference-in-differences estimator.

    Fits the two confounding-bridge networks by two-step GMM and exposes the
    direct (estimand="adt") or indirect (estimand="ait") effect with network
    HAC inference. Follows the scikit-learn parameter protocol so it can be
    cloned and inspected like any other estimator.

    Parameters
    ----------
    estimand : {"adt", "ait"}
        Direct effect at an exposure level, or indirect effect over
        interference sets of radius ``interference_radius``.
    exposure : str
        Exposure mapping, one of any | atleast:T | relative:F | fraction
        (direct effect only).
    target_g : float
        Exposure level defining the treated and control cells.
    interference_radius : int
        Path-distance radius of the interference sets (indirect effect only).
    epochs, learning_rate, hidden_dim, embed_dim, depth
        Bridge-network training settings.
    moment_variance_weight : float
        Weight of the per-unit moment-variance term that keeps the GMM
        training well-posed; zero recovers the bare quadratic objective.
    positive_q : bool
        Pass the treatment-bridge output through softplus.
    instrument_intercept : bool
        Append a constant instrument column.
    inference : bool
        Compute the HAC standard error, z statistic and p-value.
    random_state : int
        Seed for network initialization.

    Attributes
    ----------
    effect_ : float
        Point estimate.
    se_, z_, p_value_, bandwidth_ : float
        HAC inference results (when ``inference`` is on).
    report_ : EstimateReport
        Full report including cell counts and nuisance diagnostics.
    """

    def __init__(
        self,
        estimand="adt",
        exposure="any",
        target_g=1.0,
        interference_radius=1,
        epochs=500,
        learning_rate=0.01,
        hidden_dim=16,
        embed_dim=16,
        depth=1,
        positive_q=False,
        instrument_intercept=False,
        moment_variance_weight=MOMENT_VARIANCE_WEIGHT,
        inference=True,
        random_state=0,
    ):
        self.estimand = estimand
        self.exposure = exposure
        self.target_g = target_g
        self.interference_radius = interference_radius
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.depth = depth
        self.positive_q = positive_q
        self.instrument_intercept = instrument_intercept
        self.moment_variance_weight = moment_variance_weight
        self.inference = inference
        self.random_state = random_state

    def fit(self, dataset: PanelDataset, graph: NetworkGraph):
        from .exposure import parse_exposure

        ds, g = check_panel_graph(dataset, graph)
        common = dict(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            depth=self.depth,
            seed=self.random_state,
            positive_q=self.positive_q,
            instrument_intercept=self.instrument_intercept,
            moment_variance_weight=self.moment_variance_weight,
            inference=self.inference,
        )
        if self.estimand == "adt":
            report = estimate_adt(
                ds, g, spec=parse_exposure(self.exposure), target_g=self.target_g,
                **common,
            )
        elif self.estimand == "ait":
            report = estimate_ait(ds, g, K=self.interference_radius, **common)
        else:
            raise ValueError(f"unknown estimand {self.estimand!r}")
        self.report_ = report
        self.effect_ = report.point
        self.se_ = report.hac_se
        self.z_ = report.z_stat
        self.p_value_ = report.p_value
        self.bandwidth_ = report.bandwidth_bn
        return self

    def conf_int(self, level=0.95):
        """Normal confidence interval for the fitted effect."""
        self._require_fitted()
        if self.se_ is None or self.se_ == 0:
            raise EstimationError("no standard error available for an interval")
        from scipy.stats import norm

        half = norm.ppf(0.5 + level / 2.0) * self.se_
        return self.effect_ - half, self.effect_ + half


class SpilloverOls(BaseEstimator, _FittedMixin):
    """OLS of the outcome difference on treatment, treated-neighbor fraction,
    own covariates and neighbor-mean covariates.

    Attributes
    ----------
    effect_ : float
        Coefficient on own treatment.
    coef_ : ndarray
        All regression coefficients, intercept first.
    se_ : ndarray
        Conventional standard errors.
    """

    def fit(self, dataset: PanelDataset, graph: NetworkGraph):
        ds, g = check_panel_graph(dataset, graph)
        fit = ols_baseline(ds, g)
        self.fit_ = fit
        self.coef_ = fit.coefficients
        self.se_ = fit.se
        self.effect_ = fit.tau
        self.column_names_ = fit.column_names
        return self

    def predict(self, dataset: PanelDataset, graph: NetworkGraph) -> np.ndarray:
        """Fitted outcome differences for a dataset on its graph."""
        self._require_fitted()
        ds, g = check_panel_graph(dataset, graph)
        design, _ = _baseline_design(ds, g)
        return design @ self.coef_
