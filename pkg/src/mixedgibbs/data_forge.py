"""Synthetic dataset generation in configurable growth regimes.

Datasets are drawn from the generative mixed model itself: standard normal
covariates (scaled), group effects around a common mean with precision
``lambda_true``, and observation noise with precision ``tau_true``.  Group
counts, covariate dimension and group sizes follow rules of the group count
so that sequences of growing datasets can be produced, including sequences
whose mean group size grows like ``q**(2 + delta + epsilon)``.

Everything is a pure function of the configuration; per-member seeds of a
sequence derive from (seed, q) so each member reproduces independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model_core import MixedModelData

__all__ = ["GenConfig", "generate", "scale_sequence", "resolve_p", "resolve_group_sizes"]

N_CAP_DEFAULT = 10_000_000


@dataclass(frozen=True)
class GenConfig:
    """Growth-regime dataset recipe.

    Covariate dimension: ``p`` fixed when given, else ``ceil(p_per_q * q)``.
    Group sizes: balanced at ``r`` when given, else balanced at
    ``round(q ** (2 + delta + epsilon))``; a ``size_ratio_max`` above one
    jitters sizes while keeping max/min within that ratio.
    """

    q: int
    p: int | None = 2
    p_per_q: float | None = None
    r: int | None = None
    size_ratio_max: float = 1.0
    delta: float = 0.1
    epsilon: float = 0.0
    beta_true: float | tuple = 0.0
    mu_true: float = 0.0
    lambda_true: float = 1.0
    tau_true: float = 1.0
    covariate_scale: float = 1.0
    seed: int = 0
    n_cap: int = N_CAP_DEFAULT

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("q must be at least 2")
        if not (self.lambda_true > 0 and self.tau_true > 0):
            raise ValueError("generative precisions must be positive")
        if self.size_ratio_max < 1.0:
            raise ValueError("size_ratio_max must be at least 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if (self.p is None) == (self.p_per_q is None):
            raise ValueError("exactly one of p or p_per_q must be set")


def resolve_p(cfg: GenConfig) -> int:
    if cfg.p is not None:
        return cfg.p
    return max(1, math.ceil(cfg.p_per_q * cfg.q))


def _target_r_bar(cfg: GenConfig) -> float:
    if cfg.r is not None:
        return float(cfg.r)
    return float(round(cfg.q ** (2.0 + cfg.delta + cfg.epsilon)))


def resolve_group_sizes(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Group sizes under the configured rule.

    Balanced rules give identical sizes; with jitter, sizes are scaled by
    multipliers drawn in [1, size_ratio_max] so the realized max/min ratio
    never exceeds the bound.
    """
    r_bar = _target_r_bar(cfg)
    if r_bar < 1.0:
        raise ValueError(f"group-size rule yields r_bar={r_bar} < 1")
    if cfg.size_ratio_max == 1.0:
        return np.full(cfg.q, int(round(r_bar)), dtype=np.int64)
    mult = rng.uniform(1.0, cfg.size_ratio_max, size=cfg.q)
    sizes = np.maximum(1, np.round(r_bar * mult / mult.mean()).astype(np.int64))
    return sizes


def _beta_vector(cfg: GenConfig, p: int) -> np.ndarray:
    b = np.asarray(cfg.beta_true, dtype=np.float64)
    if b.ndim == 0:
        return np.full(p, float(b))
    if b.shape != (p,):
        raise ValueError(f"beta_true has shape {b.shape}, expected ({p},)")
    return b


def generate(cfg: GenConfig) -> MixedModelData:
    """Draw one dataset; identical configuration gives identical bits."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    p = resolve_p(cfg)
    sizes = resolve_group_sizes(cfg, rng)
    n = int(sizes.sum())
    if n > cfg.n_cap:
        raise ValueError(f"predicted N={n} exceeds cap {cfg.n_cap} at q={cfg.q}")
    beta = _beta_vector(cfg, p)
    x = cfg.covariate_scale * rng.standard_normal((n, p))
    effects = cfg.mu_true + rng.standard_normal(cfg.q) / math.sqrt(cfg.lambda_true)
    noise = rng.standard_normal(n) / math.sqrt(cfg.tau_true)
    y = x @ beta + np.repeat(effects, sizes) + noise
    return MixedModelData(q=cfg.q, p=p, group_sizes=sizes, y=y, x=x)


def scale_sequence(cfg: GenConfig, q_list) -> list[GenConfig]:
    """Per-member configurations for a growing sequence of datasets.

    ``q_list`` must be strictly increasing.  Each member derives its seed
    from (seed, q) and is checked against the row cap before any member is
    returned, naming the offending q on refusal.
    """
    q_list = list(q_list)
    if any(b <= a for a, b in zip(q_list, q_list[1:])):
        raise ValueError("q_list must be strictly increasing")
    members = []
    for q in q_list:
        member = replace(cfg, q=q, seed=cfg.seed)
        sizes_probe = _target_r_bar(member) * q
        if sizes_probe * member.size_ratio_max > cfg.n_cap:
            raise ValueError(f"predicted N={sizes_probe:.0f} exceeds cap {cfg.n_cap} at q={q}")
        derived = int(np.random.SeedSequence([cfg.seed, q]).generate_state(1)[0])
        members.append(replace(member, seed=derived))
    return members
