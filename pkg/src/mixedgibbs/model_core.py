"""Data containers and core statistics for the Bayesian linear mixed model.

The model has ``q`` groups with sizes ``r_1..r_q``, responses ``y_ij``,
covariates ``x_ij`` in ``R^p``, a scaled regression block ``eta00``
(``sqrt(q) * beta``), a scaled random-effect mean ``eta0`` (``sqrt(q) * mu``)
and per-group random effects ``eta_1..eta_q``.  Gamma priors with shape/rate
``(a1, b1)`` and ``(a2, b2)`` sit on the two precisions ``lambda`` (random
effects) and ``tau`` (noise).

This module holds the immutable dataset container, the derived design
aggregates that every sampler iteration consumes, the drift function used by
the convergence laboratory, the unnormalized joint posterior log density, and
a numerical audit of the growth-regime assumptions.  Everything here is a
pure function over immutable inputs and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MixedModelData",
    "DerivedDesign",
    "Hyperparameters",
    "ChainState",
    "ModelContext",
    "AssumptionThresholds",
    "AssumptionReport",
    "DatasetFormatError",
    "build_derived",
    "sufficient_stats",
    "drift_value",
    "log_unnormalized_joint",
    "check_assumptions",
    "load_dataset",
    "write_dataset",
]


class DatasetFormatError(ValueError):
    """Raised when a dataset CSV does not match the expected layout."""


@dataclass(frozen=True)
class MixedModelData:
    """Observed data in flattened form.

    ``y`` is the length-N response vector, ``x`` the N x p covariate matrix,
    both ordered group by group.  ``group_sizes[i]`` gives the number of rows
    belonging to group ``i``, so group ``i`` occupies the contiguous row block
    starting at ``sum(group_sizes[:i])``.
    """

    q: int
    p: int
    group_sizes: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.group_sizes, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if self.q < 1 or self.p < 1:
            raise ValueError("q and p must both be at least 1")
        if sizes.shape != (self.q,) or np.any(sizes < 1):
            raise ValueError("group_sizes must be q positive integers")
        n = int(sizes.sum())
        if y.shape != (n,) or x.shape != (n, self.p):
            raise ValueError(
                f"shape mismatch: expected y ({n},) and x ({n},{self.p}), "
                f"got {y.shape} and {x.shape}"
            )
        bad = ~np.isfinite(y)
        if bad.any():
            i, j = self._locate(int(np.argmax(bad)))
            raise ValueError(f"non-finite response y at group {i}, row {j}")
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            i, j = self._locate(int(np.argmax(bad)))
            raise ValueError(f"non-finite covariate x at group {i}, row {j}")
        object.__setattr__(self, "_starts", np.concatenate(([0], np.cumsum(sizes)[:-1])))

    def _locate(self, flat_row):
        """Map a flat row index to (group index, within-group index), 0-based."""
        starts = np.cumsum(np.concatenate(([0], self.group_sizes[:-1])))
        i = int(np.searchsorted(starts, flat_row, side="right")) - 1
        return i, flat_row - int(starts[i])

    @property
    def n_total(self) -> int:
        return int(self.group_sizes.sum())

    @property
    def group_starts(self) -> np.ndarray:
        return self._starts

    @classmethod
    def from_ragged(cls, y_groups, x_groups):
        """Build from per-group lists of responses and covariate row blocks."""
        if len(y_groups) != len(x_groups):
            raise ValueError("y and x must have the same number of groups")
        sizes = np.array([len(g) for g in y_groups], dtype=np.int64)
        y = np.concatenate([np.asarray(g, dtype=np.float64) for g in y_groups])
        x = np.vstack([np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in x_groups])
        return cls(q=len(sizes), p=x.shape[1], group_sizes=sizes, y=y, x=x)


@dataclass(frozen=True)
class DerivedDesign:
    """Group-level and p-dimensional aggregates used by every iteration.

    Only O(q p + p^2) storage; the N x p group-mean expansion of the design
    is never materialized outside the dense test path.
    """

    q: int
    n_total: int
    r_bar: float
    r_min: int
    r_max: int
    group_sizes: np.ndarray
    xbar: np.ndarray          # (q, p) per-group covariate means
    ybar_groups: np.ndarray   # (q,) per-group response means
    ybar: float               # grand mean of the group means
    xtx: np.ndarray           # (p, p) Gram X'X
    xbtxb: np.ndarray         # (p, p) sum_i r_i xbar_i xbar_i'
    xty: np.ndarray           # (p,) X'Y
    sum_x: np.ndarray         # (p,) column sums of X
    sum_y_sq: float
    within_group_ss: float
    # distinct group sizes, for broadcasting per-size precision quantities
    size_values: np.ndarray = field(repr=False, default=None)
    size_inverse: np.ndarray = field(repr=False, default=None)


def build_derived(data: MixedModelData) -> DerivedDesign:
    """Compute all design aggregates in one pass over the data."""
    sizes = data.group_sizes
    starts = data.group_starts
    n = data.n_total
    group_sum_y = np.add.reduceat(data.y, starts)
    ybar_groups = group_sum_y / sizes
    group_sum_x = np.add.reduceat(data.x, starts, axis=0)
    xbar = group_sum_x / sizes[:, None]
    xtx = data.x.T @ data.x
    xbtxb = (xbar * sizes[:, None]).T @ xbar
    xty = data.x.T @ data.y
    centered = data.y - np.repeat(ybar_groups, sizes)
    values, inverse = np.unique(sizes, return_inverse=True)
    return DerivedDesign(
        q=data.q,
        n_total=n,
        r_bar=n / data.q,
        r_min=int(sizes.min()),
        r_max=int(sizes.max()),
        group_sizes=sizes,
        xbar=xbar,
        ybar_groups=ybar_groups,
        ybar=float(ybar_groups.mean()),
        xtx=xtx,
        xbtxb=xbtxb,
        xty=xty,
        sum_x=data.x.sum(axis=0),
        sum_y_sq=float(data.y @ data.y),
        within_group_ss=float(centered @ centered),
        size_values=values,
        size_inverse=inverse,
    )


@dataclass(frozen=True)
class Hyperparameters:
    """Gamma prior shapes and rates for the two precisions."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        for name in ("a1", "b1", "a2", "b2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"hyperparameter {name} must be strictly positive")


@dataclass(frozen=True)
class ChainState:
    """One point of the (p + q + 1)-dimensional chain."""

    eta00: np.ndarray
    eta0: float
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta00", np.asarray(self.eta00, dtype=np.float64))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=np.float64))
        object.__setattr__(self, "eta0", float(self.eta0))

    def as_vector(self) -> np.ndarray:
        """Flat layout (eta00, eta0, eta_1..eta_q)."""
        return np.concatenate([self.eta00, [self.eta0], self.eta])

    @classmethod
    def from_vector(cls, vec, p: int, q: int) -> "ChainState":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (p + q + 1,):
            raise ValueError(f"expected vector of length {p + q + 1}, got {vec.shape}")
        return cls(eta00=vec[:p].copy(), eta0=float(vec[p]), eta=vec[p + 1 :].copy())

    @classmethod
    def zeros(cls, p: int, q: int) -> "ChainState":
        return cls(eta00=np.zeros(p), eta0=0.0, eta=np.zeros(q))

    def validate(self):
        if not (np.isfinite(self.eta00).all() and math.isfinite(self.eta0) and np.isfinite(self.eta).all()):
            raise ValueError("chain state contains non-finite entries")


@dataclass(frozen=True)
class ModelContext:
    """Shared immutable bundle (data, design aggregates, prior) for one model."""

    data: MixedModelData
    design: DerivedDesign
    hyper: Hyperparameters

    @classmethod
    def create(cls, data: MixedModelData, hyper: Hyperparameters) -> "ModelContext":
        return cls(data=data, design=build_derived(data), hyper=hyper)


def sufficient_stats(state: ChainState, data: MixedModelData):
    """Return the two sums of squares driving the precision draws.

    ``group_penalty``  = sum_i (eta_i - eta0/sqrt(q))^2
    ``residual_sum``   = sum_ij (y_ij - x_ij' eta00/sqrt(q) - eta_i)^2

    Plain sums, no 1/2 factor and no prior rates; callers apply those.
    """
    sq = math.sqrt(data.q)
    d = state.eta - state.eta0 / sq
    group_penalty = float(d @ d)
    resid = data.y - data.x @ (state.eta00 / sq) - np.repeat(state.eta, data.group_sizes)
    residual_sum = float(resid @ resid)
    return group_penalty, residual_sum


def drift_value(state: ChainState, design: DerivedDesign) -> float:
    """Evaluate the drift function, a convex nonnegative functional of the state.

    Three terms: mean squared gap between the grand response mean and the
    fitted covariate effect, the squared scaled random-effect mean over q,
    and the size-weighted mean squared centered random effect.
    """
    n = design.n_total
    w = state.eta00 / math.sqrt(design.q)
    t1 = (
        design.ybar**2
        - 2.0 * design.ybar * float(design.sum_x @ w) / n
        + float(w @ design.xtx @ w) / n
    )
    t2 = state.eta0**2 / design.q
    dev = state.eta + design.ybar - design.ybar_groups
    t3 = float(design.group_sizes @ (dev * dev)) / n
    # t1 is a mean of squares; clamp rounding noise at zero
    return max(t1, 0.0) + t2 + t3


def log_unnormalized_joint(
    state: ChainState,
    lam: float,
    tau: float,
    data: MixedModelData,
    hyper: Hyperparameters,
) -> float:
    """Joint posterior log density of (state, lambda, tau), up to one constant.

    The constant is independent of the state and of both precisions.
    Raises ValueError outside the positive-precision domain.
    """
    if not (lam > 0 and tau > 0):
        raise ValueError("lambda and tau must be strictly positive")
    gp, rs = sufficient_stats(state, data)
    q, n = data.q, data.n_total
    return (
        (q / 2 + hyper.a1 - 1) * math.log(lam)
        - hyper.b1 * lam
        + (n / 2 + hyper.a2 - 1) * math.log(tau)
        - hyper.b2 * tau
        - 0.5 * lam * gp
        - 0.5 * tau * rs
    )


@dataclass(frozen=True)
class AssumptionThresholds:
    """User thresholds for the growth-regime audit flags."""

    m_max: float = 4.0
    k1_min: float = 1e-8
    k2_max: float = 1e8
    ell_max: float = 1e8
    p_over_q_max: float = 1.0
    growth_min: float = 1.0


@dataclass(frozen=True)
class AssumptionReport:
    """Numerical estimates of the growth-regime constants plus pass flags.

    Purely diagnostic; the sampler itself only needs the precision matrix of
    the regression block to be invertible.
    """

    m_hat: float
    k1_hat: float
    k2_hat: float
    ell_hat: float
    p_over_q: float
    growth_ratio: float
    delta: float
    pass_flags: dict


def check_assumptions(
    data: MixedModelData,
    delta: float,
    thresholds: AssumptionThresholds = AssumptionThresholds(),
) -> AssumptionReport:
    """Audit the bounded-ratio, design-spectrum, response-energy, dimension
    and group-size-growth conditions against the given thresholds."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    design = build_derived(data)
    scale = design.r_bar * data.q
    if data.p >= design.n_total:
        warnings.warn("p >= N: design spectrum condition degenerate, k1 reported as 0")
        k1_hat = 0.0
    else:
        k1_hat = float(np.linalg.eigvalsh((design.xtx - design.xbtxb) / scale)[0])
    k2_hat = float(np.linalg.eigvalsh(design.xtx / scale)[-1])
    m_hat = design.r_max / design.r_min
    ell_hat = design.sum_y_sq / scale
    p_over_q = data.p / data.q
    growth_ratio = design.r_bar / data.q ** (2 + delta)
    flags = {
        "size_ratio": m_hat <= thresholds.m_max,
        "design_spectrum": (k1_hat >= thresholds.k1_min) and (k2_hat <= thresholds.k2_max),
        "response_energy": ell_hat <= thresholds.ell_max,
        "dimension": p_over_q <= thresholds.p_over_q_max,
        "group_size_growth": growth_ratio >= thresholds.growth_min,
    }
    return AssumptionReport(
        m_hat=m_hat,
        k1_hat=k1_hat,
        k2_hat=k2_hat,
        ell_hat=ell_hat,
        p_over_q=p_over_q,
        growth_ratio=growth_ratio,
        delta=delta,
        pass_flags=flags,
    )


def load_dataset(path) -> MixedModelData:
    """Read a dataset CSV with header ``group,y,x1,...,xp``.

    Rows must arrive in contiguous group blocks; a group label that reappears
    after a different label was seen is rejected.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[0] != "group" or header[1] != "y":
            raise DatasetFormatError(f"{path}: expected header group,y,x1,...,xp")
        p = len(header) - 2
        expected = [f"x{j + 1}" for j in range(p)]
        if header[2:] != expected:
            raise DatasetFormatError(f"{path}: covariate columns must be named {expected}")
        labels, ys, xs = [], [], []
        for row in reader:
            if not row:
                continue
            labels.append(row[0])
            ys.append(float(row[1]))
            xs.append([float(v) for v in row[2:]])
    if not ys:
        raise DatasetFormatError(f"{path}: no data rows")
    seen = {}
    sizes = []
    for lab in labels:
        if lab in seen:
            if seen[lab] != len(sizes) - 1:
                raise DatasetFormatError(f"{path}: group {lab!r} rows are not contiguous")
            sizes[-1] += 1
        else:
            seen[lab] = len(sizes)
            sizes.append(1)
    return MixedModelData(
        q=len(sizes),
        p=p,
        group_sizes=np.array(sizes, dtype=np.int64),
        y=np.array(ys),
        x=np.array(xs),
    )


def write_dataset(path, data: MixedModelData):
    """Write the dataset CSV (header ``group,y,x1,...,xp``, contiguous groups)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "y"] + [f"x{j + 1}" for j in range(data.p)])
        row = 0
        for i, size in enumerate(data.group_sizes):
            for _ in range(size):
                writer.writerow([i, repr(float(data.y[row]))] + [repr(float(v)) for v in data.x[row]])
                row += 1
