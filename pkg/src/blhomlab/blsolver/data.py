"""Boundary data and solved boundary-layer fields."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..geometry import NormalFrame, divisors

TWO_PI = 2.0 * math.pi


class FieldRangeError(ValueError):
    """Evaluation outside the computed range of a grid field."""


@dataclass(frozen=True, eq=False)
class FourierBoundaryData:
    """Finitely supported Fourier series ``v0(y) = sum vhat(xi) e^{2 pi i xi.y}``.

    Modes are stored sorted (squared norm, then coordinates) so iteration
    order never depends on how the data were entered.
    """

    xi: np.ndarray  # (k, d) int64
    coef: np.ndarray  # (k,) complex

    @classmethod
    def from_modes(cls, modes: Mapping[tuple[int, ...], complex] | Iterable[tuple[tuple[int, ...], complex]],
                   d: int = 2, tol: float = 1e-12) -> "FourierBoundaryData":
        """Build from ``{xi: vhat}``; duplicate keys are summed.

        Raises
        ------
        ValueError
            If the coefficients are not Hermitian (``vhat(-xi) = conj vhat(xi)``).
        """
        items = modes.items() if isinstance(modes, Mapping) else modes
        acc: dict[tuple[int, ...], complex] = {}
        for k, v in items:
            key = tuple(int(c) for c in k)
            if len(key) != d:
                raise ValueError(f"mode {key} has dimension {len(key)}, expected {d}")
            acc[key] = acc.get(key, 0j) + complex(v)
        keys = sorted(acc, key=lambda x: (sum(c * c for c in x), x))
        for k in keys:
            mk = tuple(-c for c in k)
            other = acc.get(mk, 0j)
            if abs(acc[k] - other.conjugate()) > tol * max(1.0, abs(acc[k])):
                raise ValueError(f"coefficients are not Hermitian at mode {k}")
        xi = np.array(keys, dtype=np.int64).reshape(-1, d)
        coef = np.array([acc[k] for k in keys], dtype=complex)
        xi.setflags(write=False)
        coef.setflags(write=False)
        return cls(xi, coef)

    @classmethod
    def cosine(cls, xi, amplitude: float = 1.0) -> "FourierBoundaryData":
        """``amplitude cos(2 pi xi.y)``."""
        xi = tuple(int(c) for c in xi)
        if not any(xi):
            return cls.constant(amplitude, len(xi))
        return cls.from_modes({xi: amplitude / 2, tuple(-c for c in xi): amplitude / 2}, d=len(xi))

    @classmethod
    def sine(cls, xi, amplitude: float = 1.0) -> "FourierBoundaryData":
        """``amplitude sin(2 pi xi.y)``."""
        xi = tuple(int(c) for c in xi)
        return cls.from_modes({xi: -0.5j * amplitude, tuple(-c for c in xi): 0.5j * amplitude}, d=len(xi))

    @classmethod
    def constant(cls, c: float, d: int = 2) -> "FourierBoundaryData":
        return cls.from_modes({(0,) * d: c}, d=d)

    @property
    def d(self) -> int:
        return int(self.xi.shape[1])

    @property
    def mean(self) -> float:
        z = np.all(self.xi == 0, axis=1)
        return float(self.coef[z].real.sum())

    @property
    def max_norm(self) -> float:
        if self.xi.size == 0:
            return 0.0
        return float(np.sqrt(np.max(np.sum(self.xi * self.xi, axis=1))))

    def __add__(self, other: "FourierBoundaryData") -> "FourierBoundaryData":
        pairs = [(tuple(x), c) for x, c in zip(self.xi.tolist(), self.coef)]
        pairs += [(tuple(x), c) for x, c in zip(other.xi.tolist(), other.coef)]
        return FourierBoundaryData.from_modes(pairs, d=self.d)

    def __call__(self, y) -> np.ndarray:
        """Evaluate at points ``y`` of shape ``(..., d)``."""
        y = np.asarray(y, dtype=float)
        phase = TWO_PI * (y @ self.xi.T.astype(float))
        return np.real(np.exp(1j * phase) @ self.coef)

    def shifted(self, s) -> "FourierBoundaryData":
        """Data ``y -> v0(y + s)``."""
        s = np.asarray(s, dtype=float)
        c = self.coef * np.exp(1j * TWO_PI * (self.xi @ s))
        c.setflags(write=False)
        return FourierBoundaryData(self.xi, c)

    def to_list(self) -> list:
        return [[x, [float(c.real), float(c.imag)]] for x, c in zip(self.xi.tolist(), self.coef)]

    @classmethod
    def from_list(cls, items: list, d: int = 2) -> "FourierBoundaryData":
        return cls.from_modes([(tuple(x), complex(c[0], c[1])) for x, c in items], d=d)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class SeriesField:
    """Exact solution of the constant-coefficient Laplacian layer.

    ``V(theta, t) = sum vhat(xi) e^{2 pi i xi.a n} e^{-2 pi |N^T xi| t} e^{2 pi i xi.theta}``;
    ``t`` is the distance from the boundary ``{y.n = a}`` and the physical
    point is ``y = N z' + (a + t) n`` with ``theta = N z'``.
    """

    data: FourierBoundaryData
    frame: NormalFrame
    rates: np.ndarray
    coef: np.ndarray  # coefficients including the offset phase

    @property
    def tail(self) -> float:
        return self.data.mean

    @property
    def nonzero(self) -> np.ndarray:
        return np.any(self.data.xi != 0, axis=1)

    def evaluate(self, theta, t) -> np.ndarray:
        """``V`` at torus angles ``theta`` (shape ``(..., d)``) and heights ``t >= 0``."""
        theta = np.asarray(theta, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise FieldRangeError("t must be nonnegative")
        phase = np.exp(1j * TWO_PI * (theta @ self.data.xi.T.astype(float)))
        damp = np.exp(-np.multiply.outer(t, self.rates))
        return np.real(np.sum(phase * damp * self.coef, axis=-1))

    def trace(self, z, t) -> np.ndarray:
        """``V(N z, t)`` for tangential coordinates ``z`` (shape ``(..., d-1)`` or scalar in 2D)."""
        z = np.asarray(z, dtype=float)
        if self.frame.d == 2 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        return self.evaluate(z @ self.frame.N.T, t)

    def deviation_l2(self, t) -> np.ndarray:
        """``||V(., t) - vhat(0)||_{L2(T^d)}`` by Parseval."""
        t = np.asarray(t, dtype=float)
        nz = self.nonzero
        w = np.abs(self.coef[nz]) ** 2
        return np.sqrt(np.exp(-2.0 * np.multiply.outer(t, self.rates[nz])) @ w)

    def deviation_sup_bound(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        nz = self.nonzero
        return np.exp(-np.multiply.outer(t, self.rates[nz])) @ np.abs(self.coef[nz])


def solve_series_laplacian(v0: FourierBoundaryData, frame: NormalFrame) -> SeriesField:
    """Exact layer of the Laplacian for finitely supported quasiperiodic data."""
    if v0.d != frame.d:
        raise ValueError("data and frame dimensions differ")
    rates = (TWO_PI * divisors(frame, v0.xi)).astype(float) if len(v0.xi) else np.zeros(0)
    coef = v0.coef * np.exp(1j * TWO_PI * frame.a * (v0.xi @ frame.n))
    rates.setflags(write=False)
    return SeriesField(v0, frame, rates, coef)


@dataclass(frozen=True, eq=False)
class GridField:
    """Numerical layer on (tangential grid) x [0, T].

    ``kind == "strip"``: one tangential period ``z1 in [0, period)`` of a
    rational direction, values shape ``(nt+1, n_theta)``.
    ``kind == "torus"``: angles ``theta in [0,1)^2``, values shape
    ``(nt+1, n_theta, n_theta)``.
    """

    frame: NormalFrame
    kind: str
    T: float
    t: np.ndarray
    values: np.ndarray
    iota: float
    residual: float
    iterations: int
    tol: float
    period: float = 1.0
    generator: tuple[int, ...] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_theta(self) -> int:
        return int(self.values.shape[1])

    @property
    def nt(self) -> int:
        return int(self.values.shape[0] - 1)

    def tangential_nodes(self) -> np.ndarray:
        """Strip: ``z1`` nodes. Torus: ``(n, n, 2)`` array of angles."""
        n = self.n_theta
        if self.kind == "strip":
            return np.arange(n) * (self.period / n)
        g = np.arange(n) / n
        a, b = np.meshgrid(g, g, indexing="ij")
        return np.stack([a, b], axis=-1)

    def evaluate(self, point, t: float) -> float:
        """Multilinear interpolation; exact at grid nodes."""
        if t < 0 or t > self.T * (1 + 1e-12):
            raise FieldRangeError(f"t={t} outside [0, {self.T}]")
        s = min(t / self.T * self.nt, self.nt)
        j0 = min(int(math.floor(s)), self.nt - 1)
        wt = s - j0
        n = self.n_theta
        if self.kind == "strip":
            u = (float(point) / self.period) * n
            i0 = int(math.floor(u))
            wu = u - i0
            rows = self.values[[j0, j0 + 1]]
            col = (1 - wu) * rows[:, i0 % n] + wu * rows[:, (i0 + 1) % n]
            return float((1 - wt) * col[0] + wt * col[1])
        p = np.asarray(point, dtype=float) * n
        i0 = np.floor(p).astype(int)
        w = p - i0
        val = 0.0
        for dj, cj in ((0, 1 - wt), (1, wt)):
            if cj == 0:
                continue
            sl = self.values[j0 + dj]
            for a, ca in ((0, 1 - w[0]), (1, w[0])):
                for b, cb in ((0, 1 - w[1]), (1, w[1])):
                    c = cj * ca * cb
                    if c != 0:
                        val += c * sl[(i0[0] + a) % n, (i0[1] + b) % n]
        return float(val)

    def slab_norms(self, tail: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Per height: RMS and max of ``|V - tail|`` over the tangential grid."""
        c = 0.0 if tail is None else tail
        dev = (self.values - c).reshape(self.nt + 1, -1)
        return np.sqrt(np.mean(dev**2, axis=1)), np.max(np.abs(dev), axis=1)

    def to_csv(self) -> str:
        """Rows ``theta1,theta2,t,V``; strip angles are ``N z1`` (not reduced mod 1)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta1", "theta2", "t", "V"])
        nodes = self.tangential_nodes()
        if self.kind == "strip":
            th = np.outer(nodes, self.frame.N[:, 0])
        else:
            th = nodes.reshape(-1, 2)
        for j, tj in enumerate(self.t):
            vals = self.values[j].reshape(-1)
            for (a, b), v in zip(th, vals):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(tj)), repr(float(v))])
        return buf.getvalue()

    def summary(self) -> dict:
        l2, linf = self.slab_norms()
        stride = max(1, self.nt // 16)
        return {
            "kind": self.kind,
            "T": self.T,
            "grid": [self.n_theta, self.nt],
            "iota": self.iota,
            "residual": self.residual,
            "iterations": self.iterations,
            "period": self.period,
            "frame": self.frame.to_dict(),
            "slabs": [[float(self.t[j]), float(l2[j]), float(linf[j])] for j in range(0, self.nt + 1, stride)],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


BoundaryLayerField = SeriesField | GridField


def evaluate(field: BoundaryLayerField, point, t: float) -> float:
    """Value of a layer at ``(tangential point or torus angle, t)``."""
    if isinstance(field, SeriesField):
        p = np.asarray(point, dtype=float)
        if p.ndim == 0 or p.shape[-1] != field.frame.d:
            return float(field.trace(p, t))
        return float(field.evaluate(p, t))
    return field.evaluate(point, t)
