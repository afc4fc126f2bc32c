"""Exposure mappings: per-unit summaries of neighbors' treatments.

Four mappings are supported, all depending on the 1-neighborhood only:
an any-treated-neighbor indicator, an at-least-t indicator, an indicator
relative to the network mean, and the treated fraction itself.
"""

from dataclasses import dataclass

import numpy as np

from .graph import NetworkGraph

ANY_TREATED = "any_treated"
AT_LEAST = "at_least"
RELATIVE_MEAN = "relative_mean"
FRACTION_TREATED = "fraction_treated"


@dataclass(frozen=True)
class ExposureSpec:
    """Definition of an exposure mapping.

    kind is one of ANY_TREATED, AT_LEAST, RELATIVE_MEAN, FRACTION_TREATED;
    threshold is the minimum treated-neighbor count for AT_LEAST and the
    fraction of the network mean for RELATIVE_MEAN. All mappings have
    neighborhood radius 1.
    """

    kind: str
    threshold: float = 0.0
    K: int = 1

    def __post_init__(self):
        if self.kind not in (ANY_TREATED, AT_LEAST, RELATIVE_MEAN, FRACTION_TREATED):
            raise ValueError(f"unknown exposure kind {self.kind!r}")
        if self.kind == AT_LEAST and (self.threshold < 1 or self.threshold != int(self.threshold)):
            raise ValueError("at-least exposure needs an integer threshold >= 1")
        if self.kind == RELATIVE_MEAN and not (0.0 < self.threshold <= 1.0):
            raise ValueError("relative-mean exposure needs a fraction in (0, 1]")


@dataclass(frozen=True)
class ExposureVector:
    """Realized exposure values, one per unit."""

    spec: ExposureSpec
    values: np.ndarray


def parse_exposure(text: str) -> ExposureSpec:
    """Parse the CLI form: any | atleast:T | relative:F | fraction."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name == "any":
        return ExposureSpec(ANY_TREATED)
    if name == "atleast":
        return ExposureSpec(AT_LEAST, threshold=int(arg))
    if name == "relative":
        return ExposureSpec(RELATIVE_MEAN, threshold=float(arg))
    if name == "fraction":
        return ExposureSpec(FRACTION_TREATED)
    raise ValueError(f"unknown exposure mapping {text!r}")


def _check_binary(D, n):
    D = np.asarray(D)
    if D.shape != (n,):
        raise ValueError(f"treatment vector must have length {n}, got shape {D.shape}")
    if not np.isin(D, (0, 1)).all():
        raise ValueError("treatment vector must be binary")
    return D.astype(np.float64)


def treated_neighbor_count(D, g: NetworkGraph) -> np.ndarray:
    """Number of treated direct neighbors of each unit."""
    Df = _check_binary(D, g.n)
    return (g.adjacency.astype(np.float64) @ Df).astype(np.int64)


def compute_exposure(spec: ExposureSpec, D, g: NetworkGraph) -> ExposureVector:
    """Evaluate an exposure mapping on a treatment vector.

    Returns binary values for the indicator mappings and the treated
    fraction (0/0 defined as 0) for FRACTION_TREATED.
    """
    counts = treated_neighbor_count(D, g).astype(np.float64)
    if spec.kind == ANY_TREATED:
        values = (counts > 0).astype(np.float64)
    elif spec.kind == AT_LEAST:
        values = (counts > spec.threshold - 1).astype(np.float64)
    elif spec.kind == RELATIVE_MEAN:
        values = (counts > spec.threshold * counts.mean()).astype(np.float64)
    else:  # FRACTION_TREATED
        deg = g.degrees.astype(np.float64)
        values = np.divide(counts, deg, out=np.zeros(g.n), where=deg > 0)
    values.flags.writeable = False
    return ExposureVector(spec=spec, values=values)
