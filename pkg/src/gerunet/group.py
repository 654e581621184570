"""The dihedral point group D4 (p4m without translations) and its actions.

Elements are written ``M**reflect @ R**rot`` with

    R = [[0, -1], [1, 0]]   quarter turn, counter-clockwise
    M = [[-1, 0], [0, 1]]   horizontal flip (negates x)

The matrices act on Cartesian offsets from the grid centre, ``x = col - cx`` and
``y = cy - row`` (y points up, so R turns an image the same way ``np.rot90``
does).  Grid actions are computed in doubled integer coordinates so that even
and odd sized grids are permuted exactly.

Canonical index: ``idx = 4 * reflect + rot``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, ShapeMismatch

ORDER = 8

_R = np.array([[0, -1], [1, 0]], dtype=np.int64)
_M = np.array([[-1, 0], [0, 1]], dtype=np.int64)


@dataclass(frozen=True)
class GroupElement:
    reflect: int
    rot: int
    matrix: np.ndarray = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.reflect not in (0, 1):
            raise InvalidArgument(f"reflect must be 0 or 1, got {self.reflect!r}")
        if self.rot not in (0, 1, 2, 3):
            raise InvalidArgument(f"rot must be in 0..3, got {self.rot!r}")
        m = np.linalg.matrix_power(_M, self.reflect) @ np.linalg.matrix_power(_R, self.rot)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def index(self) -> int:
        return 4 * self.reflect + self.rot

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)


def make_element(reflect: int, rot: int) -> GroupElement:
    return ELEMENTS[GroupElement(reflect, rot).index]


ELEMENTS: tuple[GroupElement, ...] = tuple(
    GroupElement(r, k) for r in (0, 1) for k in range(4)
)
IDENTITY = ELEMENTS[0]


def element(index: int) -> GroupElement:
    return ELEMENTS[index]


def _from_matrix(m: np.ndarray) -> GroupElement:
    # every product of R and M has exactly one canonical (reflect, rot) form
    reflect = 0 if round(np.linalg.det(m)) == 1 else 1
    r = np.linalg.matrix_power(_M, reflect) @ m  # M is an involution
    for k in range(4):
        if np.array_equal(np.linalg.matrix_power(_R, k), r):
            return ELEMENTS[4 * reflect + k]
    raise AssertionError(f"matrix {m.tolist()} is not in D4")


@lru_cache(maxsize=None)
def _cayley(a: int, b: int) -> int:
    return _from_matrix(ELEMENTS[a].matrix @ ELEMENTS[b].matrix).index


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """``a`` after ``b``: the element whose matrix is ``a.matrix @ b.matrix``."""
    return ELEMENTS[_cayley(a.index, b.index)]


def inverse(a: GroupElement) -> GroupElement:
    return _from_matrix(a.matrix.T)


def left_perm(g: GroupElement) -> np.ndarray:
    """sigma with ``sigma[idx(h)] = idx(g h)``."""
    return np.array([_cayley(g.index, h) for h in range(ORDER)], dtype=np.int64)


def _check_grid(g: GroupElement, H: int, W: int):
    if H < 1 or W < 1:
        raise InvalidArgument(f"grid must be non-empty, got {H}x{W}")
    if g.rot % 2 and H != W:
        raise ShapeMismatch(f"odd rotation of a non-square {H}x{W} grid")


def act_coord(g: GroupElement, p: tuple[int, int], H: int, W: int) -> tuple[int, int]:
    """Apply ``g`` about the centre of an HxW grid to pixel ``p = (row, col)``."""
    _check_grid(g, H, W)
    row, col = p
    if not (0 <= row < H and 0 <= col < W):
        raise InvalidArgument(f"{p} is outside a {H}x{W} grid")
    x2 = 2 * col - (W - 1)
    y2 = (H - 1) - 2 * row
    nx, ny = (int(v) for v in g.matrix @ np.array([x2, y2]))
    return ((H - 1 - ny) // 2, (nx + W - 1) // 2)


@lru_cache(maxsize=512)
def _plane_source(g_index: int, H: int, W: int) -> np.ndarray:
    # src[q] = flat index of the pixel that lands on q
    g = ELEMENTS[g_index]
    src = np.empty(H * W, dtype=np.int64)
    for r in range(H):
        for c in range(W):
            nr, nc = act_coord(g, (r, c), H, W)
            src[nr * W + nc] = r * W + c
    src.setflags(write=False)
    return src


def transform_plane(g: GroupElement, plane: np.ndarray) -> np.ndarray:
    """``out[act(g, p)] = plane[p]`` over the last two axes; a pure permutation."""
    plane = np.asarray(plane)
    if plane.ndim < 2:
        raise ShapeMismatch("transform_plane needs at least 2 axes")
    H, W = plane.shape[-2:]
    _check_grid(g, H, W)
    src = _plane_source(g.index, H, W)
    flat = plane.reshape(plane.shape[:-2] + (H * W,))
    return flat[..., src].reshape(plane.shape)


def transform_group_feature(g: GroupElement, f: np.ndarray) -> np.ndarray:
    """Act on a map over G: ``out[..., idx(g h), :, :] = transform_plane(g, f[..., idx(h), :, :])``.

    ``f`` has the orientation axis third from last (``C x 8 x H x W`` or batched).
    """
    f = np.asarray(f)
    if f.ndim < 3 or f.shape[-3] != ORDER:
        raise ShapeMismatch(f"expected orientation axis of length 8, got shape {f.shape}")
    sigma = left_perm(g)
    src = np.empty(ORDER, dtype=np.int64)
    src[sigma] = np.arange(ORDER)
    return transform_plane(g, f[..., src, :, :])


def shift_plane(t: tuple[int, int], plane: np.ndarray) -> np.ndarray:
    """Zero-padded translation over the last two axes: ``out[p + t] = plane[p]``."""
    plane = np.asarray(plane)
    H, W = plane.shape[-2:]
    dr, dc = t
    if abs(dr) >= H or abs(dc) >= W:
        raise InvalidArgument(f"shift {t} does not fit a {H}x{W} plane")
    out = np.zeros_like(plane)
    out[..., max(dr, 0):H + min(dr, 0), max(dc, 0):W + min(dc, 0)] = \
        plane[..., max(-dr, 0):H - max(dr, 0), max(-dc, 0):W - max(dc, 0)]
    return out
