"""Random grouping of dimension components into shared-parameter groups.

A group map assigns each of D dimensions to one of K groups by tiling the
pattern ``[0, 1, ..., K-1]`` ceil(D/K) times, truncating to length D, and
permuting the result with a Fisher-Yates permutation drawn from a seeded
stream. Group sizes therefore differ by at most one, and every group is
non-empty whenever K <= D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .numkit.rng import RngStream
from .numkit.tensor import Tensor, take

__all__ = ["GroupMap", "RowMode", "build_group_map", "expand", "group_sizes"]


class RowMode:
    """How perturbation rows are shared: one set per input row, or one for all."""

    SHARED = "shared"
    PER_ROW = "per_row"

    _ALL = (SHARED, PER_ROW)

    @classmethod
    def validate(cls, value: str) -> str:
        if value not in cls._ALL:
            raise ParameterError(f"row_mode must be one of {cls._ALL}, got {value!r}")
        return value


@dataclass(frozen=True)
class GroupMap:
    """Immutable assignment of D dimensions to K groups.

    ``perm`` is the permutation applied to the tiled pattern and ``assign[d]``
    is the group id of dimension d; both are kept so serialized maps survive
    generator changes.
    """

    dim_size: int
    num_groups: int
    seed: int
    perm: np.ndarray = field(repr=False)
    assign: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.perm.shape != (self.dim_size,) or self.assign.shape != (self.dim_size,):
            raise ParameterError("GroupMap arrays must have length dim_size")
        if not np.array_equal(np.sort(self.perm), np.arange(self.dim_size)):
            raise ParameterError("GroupMap perm is not a permutation")

    def to_state(self) -> dict:
        return {
            "D": self.dim_size,
            "K": self.num_groups,
            "seed": self.seed,
            "perm": [int(p) for p in self.perm],
        }

    @classmethod
    def from_state(cls, state: dict) -> "GroupMap":
        perm = np.asarray(state["perm"], dtype=np.int64)
        return cls(
            dim_size=int(state["D"]),
            num_groups=int(state["K"]),
            seed=int(state["seed"]),
            perm=perm,
            assign=_tiled_pattern(int(state["D"]), int(state["K"]))[perm],
        )


def _tiled_pattern(d: int, k: int) -> np.ndarray:
    reps = -(-d // k)  # ceil(D / K)
    return np.tile(np.arange(k, dtype=np.int64), reps)[:d]


def build_group_map(d: int, k: int, seed: int) -> GroupMap:
    """Tile, truncate, and Fisher-Yates-permute the group id pattern."""
    if k <= 0 or k > d:
        raise ParameterError(f"num_groups must satisfy 1 <= K <= D, got K={k}, D={d}")
    perm = RngStream(seed).permutation(d)
    base = _tiled_pattern(d, k)
    return GroupMap(dim_size=d, num_groups=k, seed=int(seed), perm=perm, assign=base[perm])


def expand(group_map: GroupMap, params: Tensor) -> Tensor:
    """Spread K group parameters over D dimensions: ``out[d] = params[assign[d]]``.

    Differentiable; the backward pass sums gradients within each group.
    """
    if params.shape != (group_map.num_groups,):
        raise ShapeError(f"expand: params must have shape [{group_map.num_groups}], "
                         f"got {list(params.shape)}")
    return take(params, group_map.assign)


def group_sizes(group_map: GroupMap) -> np.ndarray:
    """Number of dimensions in each group; sums to D."""
    return np.bincount(group_map.assign, minlength=group_map.num_groups)
