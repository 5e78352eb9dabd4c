"""Grouped activation modulation and stochastic weight perturbation.

Two adapter families wrap a frozen linear sub-layer ``Y = X W + b``:

* a deterministic modulation that rewrites each input activation as
  ``(x - shift) / scale`` with one (scale, shift) pair shared per group, and
* a stochastic variant that learns Gaussian perturbation distributions
  ``N(mu, sigma)`` over the frozen weights, grouped along output columns and
  optionally along input rows, trained by reparameterization.

Also here: the activation-shift / effective-bias equivalence for shift-only
modulation, the noise-aware regularizer that pulls learned sigmas toward a
target value, and the deterministic comparator used by the robustness study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ModeError, ParameterError, ShapeError
from .grouping import GroupMap, RowMode, build_group_map, expand, group_sizes
from .numkit.rng import RngStream
from .numkit.tensor import (
    Tensor,
    broadcast_rows,
    div,
    gather_2d,
    matmul,
    mul,
    reshape,
    sub,
    tsum,
)

__all__ = [
    "GraspMode",
    "GraspLayer",
    "StochLayer",
    "NoiseAwareLossConfig",
    "GAMMA_FLOOR",
    "SIGMA_FLOOR",
    "SIGMA_INIT_RANGE",
    "grasp_forward",
    "effective_bias",
    "stoch_forward",
    "noise_aware_penalty",
    "make_deterministic_baseline",
]

# numeric guards applied after every optimizer step
GAMMA_FLOOR = 1e-6
SIGMA_FLOOR = 1e-6
# uniform init range for learned standard deviations
SIGMA_INIT_RANGE = (0.001, 0.005)


class GraspMode:
    SCALE_ONLY = "scale_only"
    SHIFT_ONLY = "shift_only"
    BOTH = "both"

    _ALL = (SCALE_ONLY, SHIFT_ONLY, BOTH)

    @classmethod
    def validate(cls, value: str) -> str:
        if value not in cls._ALL:
            raise ParameterError(f"mode must be one of {cls._ALL}, got {value!r}")
        return value


class GraspLayer:
    """Grouped scale/shift modulation of a frozen linear sub-layer's input.

    Scales start at 1 and shifts at 0, so a fresh layer is an exact identity.
    In scale-only mode the shift stays pinned at 0 and untrainable; in
    shift-only mode the scale stays pinned at 1.
    """

    def __init__(self, group_map: GroupMap, mode: str = GraspMode.BOTH,
                 frozen_ref: str = ""):
        self.map = group_map
        self.mode = GraspMode.validate(mode)
        self.frozen_ref = frozen_ref
        k = group_map.num_groups
        self.gamma = Tensor(np.ones(k), requires_grad=(self.mode != GraspMode.SHIFT_ONLY))
        self.beta = Tensor(np.zeros(k), requires_grad=(self.mode != GraspMode.SCALE_ONLY))

    def trainable_tensors(self) -> dict[str, Tensor]:
        out = {}
        if self.gamma.requires_grad:
            out["gamma"] = self.gamma
        if self.beta.requires_grad:
            out["beta"] = self.beta
        return out

    def clamp(self) -> None:
        """Keep every scale entry away from zero (the forward divides by it)."""
        g = self.gamma.data
        small = np.abs(g) < GAMMA_FLOOR
        if small.any():
            sign = np.where(g < 0, -1.0, 1.0)
            self.gamma.data = np.where(small, sign * GAMMA_FLOOR, g)

    def param_count(self) -> int:
        return sum(t.size for t in self.trainable_tensors().values())


class StochLayer:
    """Gaussian perturbation distributions over a frozen weight matrix.

    Means and standard deviations are stored as [R, K] with R = D_in in
    per-row mode and R = 1 in shared mode; column groups follow ``col_map``.
    With ``sigma_trainable=False`` and sigma fixed at zero this is the
    deterministic comparator (learned offsets, no stochasticity).
    """

    def __init__(self, d_in: int, col_map: GroupMap, row_mode: str,
                 sigma_init_rng: RngStream | None = None,
                 sigma_trainable: bool = True, frozen_ref: str = ""):
        self.d_in = int(d_in)
        self.col_map = col_map
        self.row_mode = RowMode.validate(row_mode)
        self.sigma_trainable = bool(sigma_trainable)
        self.frozen_ref = frozen_ref
        rows = self.d_in if self.row_mode == RowMode.PER_ROW else 1
        k = col_map.num_groups
        self.mu = Tensor(np.zeros((rows, k)), requires_grad=True)
        if self.sigma_trainable:
            if sigma_init_rng is None:
                raise ParameterError("sigma_init_rng required when sigma is trainable")
            lo, hi = SIGMA_INIT_RANGE
            sigma0 = lo + (hi - lo) * sigma_init_rng.uniform((rows, k))
            self.sigma = Tensor(sigma0, requires_grad=True)
        else:
            self.sigma = Tensor(np.zeros((rows, k)), requires_grad=False)

    @property
    def rows(self) -> int:
        return self.mu.shape[0]

    def row_index(self) -> np.ndarray:
        """The row map f: either the identity over rows or all zeros."""
        if self.row_mode == RowMode.PER_ROW:
            return np.arange(self.d_in, dtype=np.int64)
        return np.zeros(self.d_in, dtype=np.int64)

    def entry_weights(self) -> np.ndarray:
        """How many weight entries each stored (mu, sigma) cell covers."""
        row_span = 1 if self.row_mode == RowMode.PER_ROW else self.d_in
        return np.outer(np.full(self.rows, row_span),
                        group_sizes(self.col_map)).astype(np.float64)

    def trainable_tensors(self) -> dict[str, Tensor]:
        out = {"mu": self.mu}
        if self.sigma_trainable:
            out["sigma"] = self.sigma
        return out

    def clamp(self) -> None:
        """Keep trainable sigmas at or above the positivity floor."""
        if self.sigma_trainable:
            np.maximum(self.sigma.data, SIGMA_FLOOR, out=self.sigma.data)

    def param_count(self) -> int:
        return sum(t.size for t in self.trainable_tensors().values())


@dataclass(frozen=True)
class NoiseAwareLossConfig:
    """Regularizer strength and the hardware-aligned sigma target."""

    lam: float
    sigma_target: float

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.sigma_target <= 0:
            raise ParameterError(f"sigma_target must be > 0, got {self.sigma_target}")


# ---------------------------------------------------------------------------
# forwards
# ---------------------------------------------------------------------------

def grasp_forward(layer: GraspLayer, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Modulate the input group-wise, then apply the frozen linear map.

    Computes ``Y[l, i] = ((X - expand(beta)) / expand(gamma)) W + b``. At
    initialization (gamma all ones, beta all zeros) the output is bit-identical
    to the unmodulated layer.
    """
    d_in = layer.map.dim_size
    if x.data.ndim != 2 or x.shape[1] != d_in:
        raise ShapeError(f"grasp_forward: X must be [L, {d_in}], got {list(x.shape)}")
    if np.any(layer.gamma.data == 0.0):
        raise DomainError("grasp_forward: gamma contains a zero entry")
    gamma_hat = expand(layer.map, layer.gamma)
    beta_hat = expand(layer.map, layer.beta)
    x_mod = div(sub(x, beta_hat), gamma_hat)
    return matmul(x_mod, w) + broadcast_rows(b, x.shape[0])


def effective_bias(layer: GraspLayer, w: Tensor, b: Tensor) -> Tensor:
    """Fold a shift-only modulation into the bias: ``b_eff = b + t W``.

    ``t = -expand(beta)`` because the forward subtracts the shift while the
    equivalence is stated for an added one. For every input X,
    ``grasp_forward(layer, X, W, b) == X W + b_eff`` up to rounding.
    """
    if layer.mode != GraspMode.SHIFT_ONLY:
        raise ModeError(f"effective_bias requires a shift_only layer, got mode={layer.mode!r}")
    t = -expand(layer.map, layer.beta)
    t_row = reshape(t, (1, layer.map.dim_size))
    return reshape(matmul(t_row, w), (w.shape[1],)) + b


def stoch_forward(layer: StochLayer, x: Tensor, w: Tensor, b: Tensor,
                  rng: RngStream | None, sample: bool) -> Tensor:
    """Apply the frozen linear map under a perturbed weight matrix.

    The perturbation mean ``M[i, j] = mu[f(i), g(j)]`` is always added; when
    sampling, an independent standard normal draw per weight entry is scaled
    by ``S[i, j] = sigma[f(i), g(j)]`` and added too (reparameterization, so
    gradients reach both mu and sigma). Without sampling this is mean
    deployment and the rng is unused.
    """
    d_in, d_out = w.shape
    if layer.d_in != d_in or layer.col_map.dim_size != d_out:
        raise ShapeError(f"stoch_forward: layer built for [{layer.d_in}, "
                         f"{layer.col_map.dim_size}] weights, got {list(w.shape)}")
    if x.data.ndim != 2 or x.shape[1] != d_in:
        raise ShapeError(f"stoch_forward: X must be [L, {d_in}], got {list(x.shape)}")
    if np.any(layer.sigma.data < 0.0):
        raise DomainError("stoch_forward: sigma contains a negative entry")
    row_idx = layer.row_index()
    col_idx = layer.col_map.assign
    w_eff = w + gather_2d(layer.mu, row_idx, col_idx)
    if sample:
        if rng is None:
            raise ParameterError("stoch_forward: sampling requires an rng stream")
        eps = Tensor(rng.normal((d_in, d_out)))
        w_eff = w_eff + mul(gather_2d(layer.sigma, row_idx, col_idx), eps)
    return matmul(x, w_eff) + broadcast_rows(b, x.shape[0])


def noise_aware_penalty(layers: list[StochLayer], cfg: NoiseAwareLossConfig) -> Tensor:
    """Quadratic pull of every per-weight sigma toward the target value.

    The sum runs over all (input row, output column) pairs of every layer, so
    each stored sigma entry is weighted by the number of weight entries it
    covers.
    """
    if not layers:
        raise ParameterError("noise_aware_penalty requires at least one layer")
    total = None
    for layer in layers:
        diff = sub(layer.sigma, Tensor(np.full(layer.sigma.shape, cfg.sigma_target)))
        weighted = mul(mul(diff, diff), Tensor(layer.entry_weights()))
        term = tsum(weighted)
        total = term if total is None else total + term
    return mul(total, Tensor(np.array(cfg.lam)))


def make_deterministic_baseline(d_in: int, d_out: int, k: int, seed: int,
                                frozen_ref: str = "") -> StochLayer:
    """Per-row learned weight offsets with sigma pinned at zero.

    Same structure and training surface as the stochastic variant minus the
    stochasticity: D_in * K trainable means, nothing else.
    """
    col_map = build_group_map(d_out, k, seed)
    return StochLayer(d_in=d_in, col_map=col_map, row_mode=RowMode.PER_ROW,
                      sigma_trainable=False, frozen_ref=frozen_ref)
