"""Norms, dual norms, steepest-direction maps, and norm subgradients.

Every norm used by the update rules and diagnostics has a closed form here:
flat l1 / l2 / l-infinity, per-block spectral, and the modular composite
(max over blocks of a per-block norm). For each norm the module exposes

  * ``norm_value``        -- ||v||
  * ``dual_norm_value``   -- ||g||* = max { <g, u> : ||u|| = 1 }
  * ``steepest_direction``-- the minimizer of <u, g> over ||u|| <= ||g||*,
                             which satisfies <d, g> = -||g||*^2 and
                             ||d|| = ||g||* whenever g != 0
  * ``norm_subgradient``  -- an element n of the subdifferential of ||.||,
                             i.e. <n, v> = ||v|| and ||n||* <= 1

Tie-breaking is deterministic everywhere: argmax ties resolve to the lowest
index, sign(0) = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError, ZeroVectorError
from .params import ParamVector, from_flat

L1 = "l1"
L2 = "l2"
LINF = "linf"
SPECTRAL = "spectral"
MODULAR_MAX = "modular_max"

_FLAT_KINDS = (L1, L2, LINF)
SVD_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class NormSpec:
    """Declarative description of the algorithm norm.

    ``kind`` is one of ``l1``, ``l2``, ``linf`` (computed on the flat
    coordinate view), ``spectral`` (max over blocks of the largest singular
    value, vectors treated as one-column matrices), or ``modular_max``
    (max over blocks, each block under its own norm from ``block_norms``).
    Modular composition is a single level: block norms may not themselves
    be modular.
    """

    kind: str
    block_norms: tuple["NormSpec", ...] = field(default=())

    def __post_init__(self):
        if self.kind not in (*_FLAT_KINDS, SPECTRAL, MODULAR_MAX):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == MODULAR_MAX:
            if not self.block_norms:
                raise ValueError("modular_max requires at least one block norm")
            if any(b.kind == MODULAR_MAX for b in self.block_norms):
                raise ValueError("modular_max block norms may not be modular_max")
        elif self.block_norms:
            raise ValueError(f"block_norms is only valid for modular_max, not {self.kind}")

    @classmethod
    def l1(cls) -> "NormSpec":
        return cls(L1)

    @classmethod
    def l2(cls) -> "NormSpec":
        return cls(L2)

    @classmethod
    def linf(cls) -> "NormSpec":
        return cls(LINF)

    @classmethod
    def spectral(cls) -> "NormSpec":
        return cls(SPECTRAL)

    @classmethod
    def modular(cls, block_norms) -> "NormSpec":
        return cls(MODULAR_MAX, tuple(block_norms))

    def label(self) -> str:
        if self.kind == MODULAR_MAX:
            return "modular:" + ",".join(b.label() for b in self.block_norms)
        return self.kind


def _check_blocks(spec: NormSpec, v: ParamVector) -> None:
    if spec.kind == MODULAR_MAX and len(spec.block_norms) != v.n_blocks:
        raise ShapeMismatchError(
            f"modular_max has {len(spec.block_norms)} block norms but the "
            f"vector has {v.n_blocks} blocks"
        )


def _as_matrix(block: np.ndarray) -> np.ndarray:
    if block.ndim == 1:
        return block.reshape(-1, 1)
    if block.ndim == 2:
        return block
    raise ShapeMismatchError(f"blocks must be vectors or matrices, got ndim={block.ndim}")


def thin_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-truncated thin SVD: M = U diag(s) V^T.

    Singular values at or below ``SVD_RANK_RTOL`` times the largest are
    dropped; a zero matrix yields empty factors.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.isfinite(matrix).all():
        raise NonFiniteError("thin_svd: matrix has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NonFiniteError(f"thin_svd: SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0], s[:0], vt[:0].T
    keep = s > SVD_RANK_RTOL * s[0]
    return u[:, keep], s[keep], vt[keep].T


def _spectral_block_norm(block: np.ndarray) -> float:
    m = _as_matrix(block)
    if m.size == 0 or not m.any():
        return 0.0
    if m.shape[1] == 1:
        return float(np.linalg.norm(m))
    return float(np.linalg.svd(m, compute_uv=False)[0])


def _nuclear_block_norm(block: np.ndarray) -> float:
    m = _as_matrix(block)
    if m.size == 0 or not m.any():
        return 0.0
    if m.shape[1] == 1:
        return float(np.linalg.norm(m))
    return float(np.linalg.svd(m, compute_uv=False).sum())


def norm_value(spec: NormSpec, v: ParamVector) -> float:
    """||v|| under ``spec``; always >= 0."""
    _check_blocks(spec, v)
    if spec.kind in _FLAT_KINDS:
        flat = v.flat()
        if spec.kind == L1:
            return float(np.abs(flat).sum())
        if spec.kind == L2:
            return float(np.linalg.norm(flat))
        return float(np.abs(flat).max()) if flat.size else 0.0
    if spec.kind == SPECTRAL:
        return max(_spectral_block_norm(b) for b in v.blocks)
    # modular_max
    return max(norm_value(bn, ParamVector((b,)))
               for bn, b in zip(spec.block_norms, v.blocks))


def dual_norm_value(spec: NormSpec, g: ParamVector) -> float:
    """||g||*: l1 and l-infinity are mutually dual, l2 is self-dual, the
    dual of max-over-blocks is the sum of per-block duals, and the dual of
    the spectral norm is the nuclear norm."""
    _check_blocks(spec, g)
    if spec.kind in _FLAT_KINDS:
        flat = g.flat()
        if spec.kind == L1:
            return float(np.abs(flat).max()) if flat.size else 0.0
        if spec.kind == L2:
            return float(np.linalg.norm(flat))
        return float(np.abs(flat).sum())
    if spec.kind == SPECTRAL:
        return float(sum(_nuclear_block_norm(b) for b in g.blocks))
    return float(sum(dual_norm_value(bn, ParamVector((b,)))
                     for bn, b in zip(spec.block_norms, g.blocks)))


def _unit_flat_direction(kind: str, flat: np.ndarray) -> np.ndarray:
    """Unit-norm steepest direction for a flat norm; <d, g> = -||g||*."""
    if kind == L2:
        n = np.linalg.norm(flat)
        return -flat / n
    if kind == L1:
        j = int(np.argmax(np.abs(flat)))
        d = np.zeros_like(flat)
        d[j] = -np.sign(flat[j])
        return d
    # linf: full sign vector, sign(0) = 0
    return -np.sign(flat)


def _unit_block_direction(spec: NormSpec, block: np.ndarray) -> np.ndarray:
    """Unit steepest direction of a single block; zero block maps to zero."""
    if not block.any():
        return np.zeros_like(block)
    if spec.kind in _FLAT_KINDS:
        return _unit_flat_direction(spec.kind, block.ravel()).reshape(block.shape)
    if spec.kind == SPECTRAL:
        m = _as_matrix(block)
        u, _, v = thin_svd(m)
        return -(u @ v.T).reshape(block.shape)
    raise ValueError(f"no block direction for kind {spec.kind!r}")


def unit_steepest_direction(spec: NormSpec, g: ParamVector) -> ParamVector:
    """The steepest direction rescaled to unit norm (zero for g = 0).

    This is the displacement of the normalized update rules; the raw
    steepest direction is ``dual_norm_value(spec, g)`` times this.
    """
    _check_blocks(spec, g)
    if not g.allfinite():
        raise NonFiniteError("steepest direction: gradient has non-finite entries")
    if dual_norm_value(spec, g) == 0.0:
        return g.zeros_like()
    if spec.kind in _FLAT_KINDS:
        return from_flat(_unit_flat_direction(spec.kind, g.flat()),
                         g.shapes(), g.trainable)
    if spec.kind == SPECTRAL:
        block_specs = [NormSpec.spectral()] * g.n_blocks
    else:
        block_specs = list(spec.block_norms)
    blocks = tuple(_unit_block_direction(bs, b)
                   for bs, b in zip(block_specs, g.blocks))
    return ParamVector(blocks, g.trainable)


def steepest_direction(spec: NormSpec, g: ParamVector) -> ParamVector:
    """The steepest-descent displacement for gradient ``g``.

    Satisfies the exact pairing <d, g> = -||g||*^2 and ||d|| = ||g||* for
    g != 0; returns zero for g = 0. The map is positively homogeneous, so
    callers carrying gradient magnitudes in log-domain may rescale after.
    """
    dual = dual_norm_value(spec, g)
    unit = unit_steepest_direction(spec, g)
    return unit.scaled(dual) if dual != 0.0 else unit


def norm_subgradient(spec: NormSpec, theta: ParamVector) -> ParamVector:
    """A fixed element of the subdifferential of ||.|| at ``theta`` != 0.

    The selection is deterministic: lowest index on argmax ties, sign(0)=0,
    leading singular pair for spectral blocks. Satisfies
    <n, theta> = ||theta|| and ||n||* <= 1.
    """
    _check_blocks(spec, theta)
    value = norm_value(spec, theta)
    if value == 0.0:
        raise ZeroVectorError("norm_subgradient is undefined at theta = 0")
    if spec.kind in _FLAT_KINDS:
        flat = theta.flat()
        if spec.kind == L2:
            n = flat / value
        elif spec.kind == L1:
            n = np.sign(flat)
        else:
            j = int(np.argmax(np.abs(flat)))
            n = np.zeros_like(flat)
            n[j] = np.sign(flat[j])
        return from_flat(n, theta.shapes(), theta.trainable)

    if spec.kind == SPECTRAL:
        block_specs = [NormSpec.spectral()] * theta.n_blocks
        block_values = [_spectral_block_norm(b) for b in theta.blocks]
    else:
        block_specs = list(spec.block_norms)
        block_values = [norm_value(bs, ParamVector((b,)))
                        for bs, b in zip(block_specs, theta.blocks)]
    j = int(np.argmax(block_values))  # lowest index on ties
    blocks = []
    for i, b in enumerate(theta.blocks):
        if i != j:
            blocks.append(np.zeros_like(b))
            continue
        bs = block_specs[i]
        if bs.kind == SPECTRAL:
            m = _as_matrix(b)
            u, _, v = thin_svd(m)
            blocks.append(np.outer(u[:, 0], v[:, 0]).reshape(b.shape))
        else:
            sub = norm_subgradient(bs, ParamVector((b,)))
            blocks.append(sub.blocks[0])
    return ParamVector(tuple(blocks), theta.trainable)
