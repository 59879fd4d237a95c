"""Standard slit domains: the upper half-plane minus finitely many horizontal slits.

A configuration of ``N`` slits is the vector
``s = (y_1..y_N, x_1..x_N, xr_1..xr_N)`` where slit ``j`` is the segment
from ``x_j + i y_j`` to ``xr_j + i y_j``.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

GAP_MIN = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SlitVector:
    y: np.ndarray
    x: np.ndarray
    xr: np.ndarray

    def __post_init__(self):
        y, x, xr = _frozen(self.y), _frozen(self.x), _frozen(self.xr)
        if not (len(y) == len(x) == len(xr)):
            raise ValidationError("geometry: y, x, xr must have equal length")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xr", xr)

    @property
    def n_slits(self):
        return len(self.y)

    @property
    def left(self):
        return self.x + 1j * self.y

    @property
    def right(self):
        return self.xr + 1j * self.y

    @property
    def center(self):
        return 0.5 * (self.x + self.xr) + 1j * self.y

    @property
    def half_length(self):
        return 0.5 * (self.xr - self.x)

    def as_array(self):
        """The 3N-vector (y, x, xr)."""
        return np.concatenate([self.y, self.x, self.xr])

    @classmethod
    def from_array(cls, s):
        s = np.asarray(s, dtype=float)
        if s.size % 3:
            raise ValidationError("geometry: slit vector length must be a multiple of 3")
        n = s.size // 3
        return cls(s[:n], s[n:2 * n], s[2 * n:])

    @classmethod
    def empty(cls):
        return cls([], [], [])

    def normalized(self):
        """Reorder slits by height descending, then left endpoint ascending."""
        order = np.lexsort((self.x, -self.y))
        return SlitVector(self.y[order], self.x[order], self.xr[order])

    def extent(self):
        """Largest modulus over all slit endpoints (0 for the empty domain)."""
        if self.n_slits == 0:
            return 0.0
        return float(max(np.abs(self.left).max(), np.abs(self.right).max()))

    def __eq__(self, other):
        if not isinstance(other, SlitVector):
            return NotImplemented
        return (np.array_equal(self.y, other.y) and np.array_equal(self.x, other.x)
                and np.array_equal(self.xr, other.xr))

    def __repr__(self):
        parts = [f"[{a:g}, {b:g}] @ {c:g}" for a, b, c in zip(self.x, self.xr, self.y)]
        return "SlitVector(" + "; ".join(parts) + ")"

    def to_json(self):
        return {"slits": [{"y": float(a), "x": float(b), "xr": float(c)}
                          for a, b, c in zip(self.y, self.x, self.xr)]}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        slits = obj["slits"] if isinstance(obj, dict) else obj
        y = [float(d["y"]) for d in slits]
        x = [float(d["x"]) for d in slits]
        xr = [float(d["xr"]) for d in slits]
        return cls(y, x, xr).normalized()


def make_slits(*segments):
    """Build a normalized configuration from ``(x, xr, y)`` triples."""
    if not segments:
        return SlitVector.empty()
    x, xr, y = zip(*segments)
    return SlitVector(y, x, xr).normalized()


def validate(s):
    """Return the list of violated invariants; empty means ``s`` is a valid point of S."""
    out = []
    for j in range(s.n_slits):
        if not np.isfinite([s.y[j], s.x[j], s.xr[j]]).all():
            out.append(f"slit {j}: non-finite entry")
            continue
        if not s.y[j] > 0:
            out.append(f"slit {j}: height y={s.y[j]:g} is not positive")
        if not s.x[j] < s.xr[j] - GAP_MIN:
            out.append(f"slit {j}: x={s.x[j]:g} is not left of xr={s.xr[j]:g}")
    for j in range(s.n_slits):
        for k in range(j + 1, s.n_slits):
            if abs(s.y[j] - s.y[k]) > GAP_MIN:
                continue
            gap = max(s.x[k] - s.xr[j], s.x[j] - s.xr[k])
            if gap < GAP_MIN:
                out.append(f"slits {j},{k}: overlap or touch at equal height y={s.y[j]:g}")
    return out


def is_valid(s):
    return not validate(s)


def require_valid(s, where="geometry"):
    bad = validate(s)
    if bad:
        raise ValidationError(f"{where}: invalid slit configuration: " + "; ".join(bad))


def translate(s, xi0):
    """Shift every slit horizontally by ``-xi0``."""
    return SlitVector(s.y, s.x - xi0, s.xr - xi0)


def scale(s, c):
    if not c > 0:
        raise ValidationError(f"geometry: scale factor must be positive, got {c}")
    return SlitVector(c * s.y, c * s.x, c * s.xr)


def contains(s, z):
    """True iff ``z`` lies in the open upper half-plane and on no closed slit."""
    z = complex(z)
    if not z.imag > 0:
        return False
    on = (z.imag == s.y) & (s.x <= z.real) & (z.real <= s.xr)
    return not bool(on.any())


def min_gap(s):
    """Smallest distance between two distinct slits (inf if fewer than two)."""
    best = np.inf
    for j in range(s.n_slits):
        for k in range(j + 1, s.n_slits):
            dx = max(0.0, s.x[k] - s.xr[j], s.x[j] - s.xr[k])
            best = min(best, float(np.hypot(dx, s.y[j] - s.y[k])))
    return best


def dist_to_slits(s, z):
    """Distance from ``z`` to the union of closed slits (inf for no slits)."""
    if s.n_slits == 0:
        return np.inf
    z = complex(z)
    xc = np.clip(z.real, s.x, s.xr)
    return float(np.min(np.hypot(z.real - xc, z.imag - s.y)))
