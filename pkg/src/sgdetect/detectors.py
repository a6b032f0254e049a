"""Discontinuity detectors and the cut functions they classify against.

A detector maps one placed grid to a vector p in [0,1]^N of per-point
troubled likelihoods.  A grid point is troubled when some incident edge
crosses the interface on the point's half of the segment (intersection
nearest to the point no farther from it than from the other endpoint).

Deterministic detectors provided here:

* ``exact_troubled_oracle`` -- closed-form segment intersections (linear,
  spherical, or any cut exposing ``segment_roots``); the ground truth used
  to label data and check convergence.
* ``z_detector`` -- the sign-sampling approximation with t+1 equispaced
  knots per edge; converges to the oracle as t grows.
* ``NeuralDetector`` -- adapter running a trained model on preprocessed
  evaluation vectors, batched across grids.

Convention: a grid point outside the target domain carries an infinite
sentinel in its evaluation slot and its output likelihood is forced to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sgdetect.errors import DetectorError
from sgdetect.grid_graph import GridGraph
from sgdetect.sparse_grid import SparseGrid

#: sentinel marking an out-of-domain evaluation slot
OUT_OF_DOMAIN = np.inf


# ---------------------------------------------------------------------------
# cut functions (scalar fields whose zero-level set carries the interface)


class CutFunction:
    """Scalar field f: R^n -> R; the interface lives in {f = 0}.

    Subclasses may expose ``segment_roots`` (exact parametric intersections
    with a segment, required by the exact oracle) and ``distance`` (exact
    distance to the zero-level set, used by convergence checks).
    """

    dim: int

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def segment_roots(self, a: np.ndarray, b: np.ndarray) -> list[float] | None:
        """Parameters t in [0, 1] with f(a + t(b-a)) = 0, or None if no closed form."""
        return None

    def distance(self, x: np.ndarray) -> np.ndarray | None:
        """Exact distance from x to the zero-level set, where available."""
        return None


class LinearCut(CutFunction):
    """Hyperplane cut eta(x) = x . (w/|w|) + b."""

    def __init__(self, w: Sequence[float], b: float):
        w = np.asarray(w, dtype=np.float64)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise ValueError("linear cut needs a nonzero normal vector")
        self.w = w / norm
        self.b = float(b)
        self.dim = w.shape[0]

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def segment_roots(self, a, b):
        va = float(self(np.asarray(a)))
        vb = float(self(np.asarray(b)))
        if va == 0.0 and vb == 0.0:
            return [0.0, 1.0]
        if va == vb:
            return []
        t = -va / (vb - va)
        return [t] if 0.0 <= t <= 1.0 else []

    def distance(self, x):
        return np.abs(self(x))


class SphericalCut(CutFunction):
    """Sphere cut sigma(x) = |x - c| - r."""

    def __init__(self, center: Sequence[float], radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.dim = self.center.shape[0]

    def __call__(self, x):
        d = np.asarray(x, dtype=np.float64) - self.center
        return np.linalg.norm(d, axis=-1) - self.radius

    def segment_roots(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        d = np.asarray(b, dtype=np.float64) - a
        u = a - self.center
        qa = float(d @ d)
        qb = 2.0 * float(d @ u)
        qc = float(u @ u) - self.radius**2
        if qa == 0.0:
            return [0.0] if qc == 0.0 else []
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            return []
        sq = math.sqrt(disc)
        roots = sorted(((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)))
        return [t for t in roots if 0.0 <= t <= 1.0]

    def distance(self, x):
        return np.abs(self(x))


class PolynomialCut(CutFunction):
    """Graph-of-a-polynomial cut pi(x) = C * poly(xi)/max|poly| - x_axis.

    ``poly`` maps the remaining n-1 coordinates (axis removed) to values;
    ``max_abs`` is its estimated maximum absolute value on [-1,1]^(n-1).
    """

    def __init__(self, poly: Callable[[np.ndarray], np.ndarray], scale: float,
                 axis: int, max_abs: float, dim: int):
        if max_abs <= 0:
            raise ValueError("max_abs must be positive")
        self.poly = poly
        self.scale = float(scale)
        self.axis = int(axis)
        self.max_abs = float(max_abs)
        self.dim = dim

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        xi = np.delete(x, self.axis, axis=-1)
        return self.scale * self.poly(xi) / self.max_abs - x[..., self.axis]


class TorusCut(CutFunction):
    """4D torus with tube radius growing with |x4|:

    (|x4| - sqrt(x1^2 + x2^2))^2 + x3^2 - (|x4|/4)^2.
    """

    dim = 4

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        ring = np.abs(x[..., 3]) - np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2)
        return ring**2 + x[..., 2] ** 2 - (np.abs(x[..., 3]) / 4.0) ** 2


class SinusoidalCut(CutFunction):
    """x2 - amplitude * sin(freq * pi * x1), a 2D wavy interface."""

    dim = 2

    def __init__(self, amplitude: float, freq: float):
        self.amplitude = float(amplitude)
        self.freq = float(freq)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x[..., 1] - self.amplitude * np.sin(self.freq * np.pi * x[..., 0])


class ProductCut(CutFunction):
    """Product of cuts: the zero-level set is the union of the factors'."""

    def __init__(self, factors: Sequence[CutFunction]):
        if not factors:
            raise ValueError("need at least one factor")
        self.factors = list(factors)
        self.dim = factors[0].dim

    def __call__(self, x):
        out = self.factors[0](x)
        for f in self.factors[1:]:
            out = out * f(x)
        return out


class CallableCut(CutFunction):
    """Wrap an arbitrary vectorized scalar field as a cut."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int,
                 roots: Callable[[np.ndarray, np.ndarray], list[float]] | None = None):
        self.fn = fn
        self.dim = dim
        self._roots = roots

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))

    def segment_roots(self, a, b):
        if self._roots is None:
            return None
        return self._roots(a, b)


# ---------------------------------------------------------------------------
# deterministic detectors


def z_detector(f: CutFunction, grid: SparseGrid, graph: GridGraph, t: int,
               coords: np.ndarray | None = None) -> np.ndarray:
    """Sign-sampling zero-level-set detector with t+1 knots per edge.

    For each edge {x_i, x_j} sample x_ij(tau) = x_i + (tau/t)(x_j - x_i),
    tau = 0..t, and compare signs: x_i is troubled if f(x_i) is exactly
    zero or some tau in {1..ceil(t/2)} changes sign against it; x_j is
    troubled if f(x_j) is zero or some tau in {floor(t/2)..t-1} changes
    sign against it.  Sign zero means exact floating-point zero; no
    tolerance is applied.
    """
    if t < 2:
        raise DetectorError(f"z-detector needs t >= 2, got {t}")
    if coords is None:
        coords = grid.coords()
    n_pts = coords.shape[0]
    p = np.zeros(n_pts, dtype=np.float64)
    edges = graph.edges
    if not edges:
        return p
    ei = np.array([e.i for e in edges])
    ej = np.array([e.j for e in edges])
    taus = np.arange(t + 1, dtype=np.float64) / t
    head_hi = math.ceil(t / 2)  # tau range {1..ceil(t/2)} for x_i
    tail_lo = math.floor(t / 2)  # tau range {floor(t/2)..t-1} for x_j
    # chunk over edges to bound the (chunk, t+1, n) sample tensor
    chunk = max(1, int(4_000_000 // (t + 1)))
    for lo in range(0, len(edges), chunk):
        sl = slice(lo, min(lo + chunk, len(edges)))
        a = coords[ei[sl]]
        b = coords[ej[sl]]
        pts = a[:, None, :] + taus[None, :, None] * (b - a)[:, None, :]
        s = np.sign(f(pts.reshape(-1, coords.shape[1])).reshape(pts.shape[0], t + 1))
        trb_i = (s[:, 0] == 0) | np.any(s[:, 1 : head_hi + 1] != s[:, :1], axis=1)
        trb_j = (s[:, t] == 0) | np.any(s[:, tail_lo:t] != s[:, t:], axis=1)
        np.maximum.at(p, ei[sl], trb_i.astype(np.float64))
        np.maximum.at(p, ej[sl], trb_j.astype(np.float64))
    return p


def exact_troubled_oracle(f: CutFunction, grid: SparseGrid, graph: GridGraph,
                          coords: np.ndarray | None = None) -> np.ndarray:
    """Exact troubled-point indicator from closed-form edge intersections.

    An endpoint is troubled iff the intersection nearest to it sits on its
    half of the segment (parameter <= 1/2 from that endpoint, ties marking
    both ends).  Requires the cut to expose ``segment_roots``; otherwise a
    :class:`DetectorError` directs the caller to the z-detector.
    """
    if coords is None:
        coords = grid.coords()
    p = np.zeros(coords.shape[0], dtype=np.float64)
    for e in graph.edges:
        roots = f.segment_roots(coords[e.i], coords[e.j])
        if roots is None:
            raise DetectorError(
                f"cut {type(f).__name__} has no closed-form segment intersection; "
                "use the z-detector instead"
            )
        if not roots:
            continue
        if min(roots) <= 0.5:
            p[e.i] = 1.0
        if max(roots) >= 0.5:
            p[e.j] = 1.0
    return p


# ---------------------------------------------------------------------------
# detector objects consumed by the engine


@dataclass
class GridSample:
    """One placed grid as seen by a detector.

    ``evaluations`` holds g at the grid points with the out-of-domain
    sentinel (inf) at masked slots; it is None when the detector does not
    consume evaluations.  ``in_domain`` marks points inside the target
    domain.
    """

    grid: SparseGrid
    graph: GridGraph
    coords: np.ndarray
    in_domain: np.ndarray
    evaluations: np.ndarray | None = None


class Detector:
    """Contract: per-grid troubled likelihoods in [0,1]^N.

    ``requires_evaluations`` tells the engine whether to evaluate the
    target on the grid before calling the detector.
    """

    requires_evaluations = False
    name = "detector"

    def detect(self, sample: GridSample) -> np.ndarray:
        raise NotImplementedError

    def detect_batch(self, samples: list[GridSample]) -> np.ndarray:
        return np.stack([self.detect(s) for s in samples])


class ZLevelDetector(Detector):
    """Deterministic Z detector bound to one cut function."""

    def __init__(self, cut: CutFunction, t: int):
        if t < 2:
            raise DetectorError(f"z-detector needs t >= 2, got {t}")
        self.cut = cut
        self.t = t
        self.name = f"zlevel:{t}"

    def detect(self, sample: GridSample) -> np.ndarray:
        return z_detector(self.cut, sample.grid, sample.graph, self.t, coords=sample.coords)


class ExactOracleDetector(Detector):
    """Exact detector bound to a cut with closed-form intersections."""

    def __init__(self, cut: CutFunction):
        self.cut = cut
        self.name = "exact"

    def detect(self, sample: GridSample) -> np.ndarray:
        return exact_troubled_oracle(self.cut, sample.grid, sample.graph, coords=sample.coords)


class NeuralDetector(Detector):
    """Adapter putting a trained model behind the detector contract.

    Applies the abs-max preprocessing to the finite evaluations, zeroes
    the sentinel slots in the model input, and forces the output to 0 at
    those slots.  Rows with no finite entry never reach the model.
    """

    requires_evaluations = True

    def __init__(self, model):
        self.model = model
        self.name = f"nn:{model.config.kind}"

    def detect(self, sample: GridSample) -> np.ndarray:
        return self.detect_batch([sample])[0]

    def detect_batch(self, samples: list[GridSample]) -> np.ndarray:
        from sgdetect.synth_data import preprocess_gamma_batch

        raw = np.stack([s.evaluations for s in samples])
        if raw.shape[1] != self.model.n_points:
            raise DetectorError(
                f"model expects {self.model.n_points} grid points, got {raw.shape[1]}"
            )
        finite = np.isfinite(raw)
        p = np.zeros(raw.shape, dtype=np.float64)
        live = np.where(finite.any(axis=1))[0]
        if live.size:
            x = preprocess_gamma_batch(raw[live])
            p[live] = self.model.predict(x)
        p[~finite] = 0.0
        return p


def parse_cut_spec(spec: str) -> CutFunction:
    """Explicit cut specs: ``linear:<w1,..,wn>:<b>`` or ``sphere:<c1,..,cn>:<r>``."""
    parts = spec.split(":")
    try:
        if parts[0] == "linear":
            return LinearCut([float(v) for v in parts[1].split(",")], float(parts[2]))
        if parts[0] == "sphere":
            return SphericalCut([float(v) for v in parts[1].split(",")], float(parts[2]))
    except (IndexError, ValueError) as exc:
        raise DetectorError(f"malformed cut spec {spec!r}: {exc}") from exc
    raise DetectorError(f"unknown cut family {parts[0]!r}; expected linear or sphere")


def make_detector(name: str, cut: CutFunction | None = None) -> Detector:
    """Build a detector from its config name.

    Names: ``exact`` (exact oracle on the target's cut),
    ``exact:<cut-spec>`` (oracle on an explicit linear/sphere cut),
    ``zlevel:<t>`` (sign-sampling detector on the target's cut),
    ``nn:<model-file>``.
    """
    if name == "exact":
        if cut is None:
            raise DetectorError("exact detector needs the target's cut function")
        return ExactOracleDetector(cut)
    if name.startswith("exact:"):
        return ExactOracleDetector(parse_cut_spec(name.split(":", 1)[1]))
    if name.startswith("zlevel:"):
        if cut is None:
            raise DetectorError("z-detector needs the target's cut function")
        try:
            t = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise DetectorError(f"malformed z-detector spec {name!r}") from exc
        return ZLevelDetector(cut, t)
    if name.startswith("nn:"):
        from sgdetect.neural.model import load_model

        return NeuralDetector(load_model(name.split(":", 1)[1]))
    raise DetectorError(f"unknown detector spec {name!r}")
