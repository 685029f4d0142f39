"""Finite-alphabet distributions, information measures and the method of types.

All logarithms are base 2. Distributions are immutable: the backing arrays are
marked read-only at construction and invalid inputs are rejected instead of
renormalized.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
DEFAULT_TYPE_CAP = 2_000_000


class DistributionError(ValueError):
    """Raised for arrays that are not valid probability distributions."""


class TypeEnumerationError(ValueError):
    """Raised when a type enumeration would exceed the configured cap."""

    def __init__(self, required: int, cap: int):
        super().__init__(f"enumeration needs {required} types, cap is {cap}")
        self.required = required
        self.cap = cap


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class JointDist:
    """Probability array over a product of finite alphabets, one named axis each."""

    probs: np.ndarray
    axes: tuple[str, ...]

    def __init__(self, probs, axes: Sequence[str] | None = None):
        arr = _frozen(probs)
        if axes is None:
            axes = tuple("XYZW"[: arr.ndim]) if arr.ndim <= 4 else tuple(f"A{i}" for i in range(arr.ndim))
        axes = tuple(axes)
        if arr.ndim == 0 or len(axes) != arr.ndim:
            raise DistributionError(f"axes {axes} do not match array of shape {arr.shape}")
        if len(set(axes)) != len(axes):
            raise DistributionError(f"duplicate axis names {axes}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DistributionError("probabilities must be finite and nonnegative")
        total = arr.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise DistributionError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", arr)
        object.__setattr__(self, "axes", axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probs.shape

    def axis_index(self, name: str) -> int:
        try:
            return self.axes.index(name)
        except ValueError:
            raise KeyError(f"no axis {name!r} in {self.axes}") from None

    def __repr__(self) -> str:
        return f"{type(self).__name__}(axes={self.axes}, probs={self.probs.tolist()})"


class Dist(JointDist):
    """A distribution on a single finite alphabet."""

    def __init__(self, probs, axes: Sequence[str] | None = None):
        arr = np.asarray(probs, dtype=float)
        if arr.ndim != 1:
            raise DistributionError(f"Dist needs a 1-D array, got shape {arr.shape}")
        super().__init__(arr, axes or ("X",))

    @classmethod
    def uniform(cls, size: int) -> "Dist":
        return cls(np.full(size, 1.0 / size))

    def __len__(self) -> int:
        return self.probs.shape[0]


def _plogp(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=float)
    pos = p > 0
    out[pos] = p[pos] * np.log2(p[pos])
    return out


def entropy_array(p: np.ndarray) -> float:
    """Shannon entropy in bits of a (flattened) probability array."""
    return float(-_plogp(np.asarray(p, dtype=float)).sum())


def entropy(v: JointDist) -> float:
    return max(entropy_array(v.probs), 0.0)


def kl_divergence(v: JointDist, p: JointDist) -> float:
    """D(v||p) in bits; ``math.inf`` when v is not absolutely continuous wrt p."""
    if v.shape != p.shape:
        raise DistributionError(f"shape mismatch {v.shape} vs {p.shape}")
    if v.axes != p.axes:
        raise DistributionError(f"axis mismatch {v.axes} vs {p.axes}")
    return kl_array(v.probs, p.probs)


def kl_array(v: np.ndarray, p: np.ndarray) -> float:
    pos = v > 0
    if np.any(p[pos] <= 0):
        return math.inf
    return max(float(np.sum(v[pos] * np.log2(v[pos] / p[pos]))), 0.0)


def marginal(v: JointDist, axes: Sequence[str]) -> JointDist:
    """Marginal on ``axes``, returned with axes in the requested order."""
    axes = tuple(axes)
    if not axes:
        raise ValueError("marginal needs at least one axis")
    idx = [v.axis_index(a) for a in axes]
    drop = tuple(i for i in range(len(v.axes)) if i not in idx)
    arr = v.probs.sum(axis=drop) if drop else v.probs
    kept = [i for i in range(len(v.axes)) if i in idx]
    arr = np.transpose(arr, [kept.index(i) for i in idx])
    if len(axes) == 1:
        return Dist(arr, axes)
    return JointDist(arr, axes)


def _h(v: JointDist, axes: Sequence[str]) -> float:
    return entropy_array(marginal(v, axes).probs)


def cond_mutual_information(v: JointDist, a: str = "X", b: str = "Z", given: str = "Y") -> float:
    """I(a ; b | given) = H(a,given) + H(b,given) - H(given) - H(a,b,given)."""
    for name in (a, b, given):
        v.axis_index(name)
    val = _h(v, (a, given)) + _h(v, (b, given)) - _h(v, (given,)) - _h(v, (a, b, given))
    return max(val, 0.0)


def multi_information(v: JointDist, axes: Sequence[str] | None = None) -> float:
    """Sum of single-axis entropies minus the joint entropy over ``axes``."""
    axes = tuple(axes) if axes is not None else v.axes
    if not 2 <= len(axes) <= 4:
        raise ValueError("multi-information is defined here for 2 to 4 axes")
    val = sum(_h(v, (a,)) for a in axes) - _h(v, axes)
    return max(val, 0.0)


def mutual_information(v: JointDist, a: str = "X", b: str = "Y") -> float:
    return multi_information(v, (a, b))


@dataclass(frozen=True, eq=False)
class TypeVector:
    """Empirical distribution with integer counts over an alphabet or product alphabet."""

    counts: np.ndarray
    denominator: int

    def __init__(self, counts, denominator: int | None = None):
        arr = np.array(counts, dtype=np.int64)
        if arr.ndim == 0:
            raise ValueError("counts must be an array")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        total = int(arr.sum())
        if denominator is None:
            denominator = total
        if denominator <= 0 or total != denominator:
            raise ValueError(f"counts sum to {total}, denominator is {denominator}")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "denominator", int(denominator))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts.shape

    def key(self) -> tuple:
        return (self.shape, tuple(int(c) for c in self.counts.ravel()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TypeVector):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"TypeVector({self.counts.tolist()}, n={self.denominator})"

    def as_dist(self, axes: Sequence[str] | None = None) -> JointDist:
        p = self.counts / self.denominator
        return Dist(p, axes) if p.ndim == 1 else JointDist(p, axes)


def type_of(seq, sizes: Sequence[int] | int | None = None) -> TypeVector:
    """Type of a sequence.

    ``seq`` is either a 1-D sequence of symbols or an ``(n, d)`` array whose rows
    are d-tuples, giving a joint type over ``sizes``. Alphabet sizes default to
    one more than the largest symbol seen on each coordinate.
    """
    arr = np.asarray(seq, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("type of an empty sequence")
    if arr.ndim == 1:
        arr = arr[:, None]
    if isinstance(sizes, int):
        sizes = (sizes,)
    if sizes is None:
        sizes = tuple(int(c) + 1 for c in arr.max(axis=0))
    sizes = tuple(sizes)
    if len(sizes) != arr.shape[1]:
        raise ValueError(f"sizes {sizes} do not match {arr.shape[1]} coordinates")
    if np.any(arr < 0) or np.any(arr >= np.array(sizes)):
        raise ValueError("symbol out of alphabet range")
    flat = np.ravel_multi_index(arr.T, sizes)
    counts = np.bincount(flat, minlength=int(np.prod(sizes))).reshape(sizes)
    return TypeVector(counts, arr.shape[0])


def joint_type(*seqs, sizes: Sequence[int] | None = None) -> TypeVector:
    return type_of(np.column_stack([np.asarray(s) for s in seqs]), sizes)


def count_types(n: int, cells: int) -> int:
    return math.comb(n + cells - 1, cells - 1)


def enumerate_types(n: int, shape: Sequence[int] | int, cap: int = DEFAULT_TYPE_CAP) -> list[TypeVector]:
    """All types with denominator ``n`` over an alphabet of the given shape."""
    if n <= 0:
        raise ValueError("n must be positive")
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    cells = int(np.prod(shape))
    required = count_types(n, cells)
    if required > cap:
        raise TypeEnumerationError(required, cap)
    out = []
    # stars and bars: bar positions among n + cells - 1 slots
    for bars in itertools.combinations(range(n + cells - 1), cells - 1):
        edges = (-1,) + bars + (n + cells - 1,)
        counts = [edges[i + 1] - edges[i] - 1 for i in range(cells)]
        out.append(TypeVector(np.reshape(counts, shape), n))
    return out


def sample_type_class(t: TypeVector, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the type class of ``t``.

    Returns a 1-D symbol array for single-alphabet types and an ``(n, d)``
    array of coordinate tuples for joint types.
    """
    flat = np.repeat(np.arange(t.counts.size), t.counts.ravel())
    flat = rng.permutation(flat)
    if t.counts.ndim == 1:
        return flat
    return np.column_stack(np.unravel_index(flat, t.shape))


def nearest_type(p: Dist, n: int) -> TypeVector:
    """Round ``p`` to a type with denominator ``n`` by largest-remainder apportionment."""
    scaled = p.probs * n
    base = np.floor(scaled).astype(np.int64)
    short = n - int(base.sum())
    # stable order keeps ties deterministic: lowest symbol index wins
    order = np.argsort(-(scaled - base), kind="stable")
    base[order[:short]] += 1
    return TypeVector(base, n)
