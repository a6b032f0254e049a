"""Recursive sparse-grid detection engine.

Both variants process a queue of box tasks (center, edge length): place a
similar grid on the box, obtain per-point troubled likelihoods from the
detector, and for each point at or above the threshold either enqueue a
new box (edge = length of the longest graph edge at that point) or, when
that length drops below the minimum, record the point as a final troubled
point.  The basic variant classifies one grid at a time; the batched
variant classifies a whole generation with one detector batch call and is
otherwise identical (same troubled set, same visits).

Centers and edges are exact dyadic rationals: every troubled point is a
lattice point of some similar grid and every edge length is the root edge
over a power of two, so the visited set and the evaluation cache use
exact keys with no floating-point misses.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from sgdetect.detectors import Detector, GridSample, OUT_OF_DOMAIN
from sgdetect.errors import DegenerateGraphError, DimensionMismatchError, EngineError
from sgdetect.grid_graph import GridGraph
from sgdetect.sparse_grid import Box, SparseGrid, similar_grid, _as_fraction

BOUNDARY_POLICIES = ("clip-stop", "ignore")
LAMBDA_RULES = ("incident", "global")


@dataclass(frozen=True)
class BoxTask:
    """One box to check: exact center and edge length, plus its generation."""

    center: tuple[Fraction, ...]
    edge: Fraction
    depth: int = field(default=0, compare=False)

    def key(self) -> tuple:
        return (self.center, self.edge)


@dataclass
class EngineConfig:
    """Stopping rule, threshold, domain handling, and engine toggles."""

    lambda_min: Fraction
    tau: float = 0.5
    domain: Box | None = None
    boundary_policy: str = "clip-stop"
    cache_evaluations: bool = True
    lambda_rule: str = "incident"
    max_evaluations: int | None = None

    def __post_init__(self):
        self.lambda_min = _as_fraction(self.lambda_min)
        if self.lambda_min <= 0:
            raise EngineError("lambda_min must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise EngineError(f"tau must be in (0, 1], got {self.tau}")
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise EngineError(f"boundary_policy must be one of {BOUNDARY_POLICIES}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise EngineError(f"lambda_rule must be one of {LAMBDA_RULES}")


@dataclass
class TroubledPoint:
    coords: tuple[float, ...]
    exact: tuple[Fraction, ...]
    trigger_lambda: Fraction
    boundary_stopped: bool = False


@dataclass
class DetectionRun:
    """Result of one engine execution: troubled set plus bookkeeping."""

    troubled: list[TroubledPoint]
    generation_sizes: list[int]
    visited_points: int
    evaluations: int
    cache_hits: int
    detector_calls: int
    grids_visited: int
    truncated: bool
    config: EngineConfig

    def troubled_coords(self) -> np.ndarray:
        if not self.troubled:
            return np.zeros((0, 0))
        return np.array([t.coords for t in self.troubled], dtype=np.float64)

    def troubled_keys(self) -> set:
        return {t.exact for t in self.troubled}


def _require_refined(grid: SparseGrid) -> None:
    """Refinement needs at least one subdivision per axis (level >= 2),
    otherwise the shrink-by-half argument behind termination has no grip."""
    from sgdetect.sparse_grid import multi_index_set

    spec = grid.spec
    indices = multi_index_set(spec.rule, spec.level, spec.dim)
    for axis in range(spec.dim):
        if max(h[axis] for h in indices) < 2:
            raise EngineError(
                f"reference grid has no refinement along axis {axis}; the engine "
                "needs minimum per-axis refinement level 2"
            )


class _EngineState:
    """Queue, visited set, cache, and counters for one run."""

    def __init__(self, grid: SparseGrid, graph: GridGraph, detector: Detector,
                 g: Callable, config: EngineConfig):
        _require_refined(grid)
        self.grid = grid
        self.graph = graph
        self.detector = detector
        self.g = g
        self.config = config
        m = grid.resolution
        lat = grid.lattice_array()
        # exact per-point offsets from the box center, in units of the edge
        self.offsets = [
            tuple(Fraction(2 * int(k) - m, 2 * m) for k in row) for row in lat
        ]
        self.offsets_float = (lat.astype(np.float64) - m / 2.0) / m
        spans = graph.incident_max_span()
        if graph.edges and int(spans.min()) == 0:
            raise DegenerateGraphError("reference graph has an isolated node")
        if self.config.lambda_rule == "incident":
            self.refine_span = [Fraction(int(s), m) for s in spans]
        else:
            global_span = max((e.span for e in graph.edges), default=0)
            self.refine_span = [Fraction(global_span, m)] * grid.n_points
        self.pending: deque[BoxTask] = deque()
        self.seen: set = set()
        self.troubled: dict = {}
        self.cache: dict = {}
        self.visited: set = set()
        self.generation_sizes: list[int] = []
        self.evaluations = 0
        self.cache_hits = 0
        self.detector_calls = 0
        self.grids_visited = 0
        self.truncated = False

    # -- per-task geometry ---------------------------------------------------

    def exact_coords(self, task: BoxTask) -> list[tuple[Fraction, ...]]:
        c, lam = task.center, task.edge
        return [tuple(c[d] + off[d] * lam for d in range(len(c))) for off in self.offsets]

    def build_sample(self, task: BoxTask) -> tuple[GridSample, list[tuple[Fraction, ...]]]:
        exact = self.exact_coords(task)
        center_f = np.array([float(c) for c in task.center])
        coords = center_f + self.offsets_float * float(task.edge)
        domain = self.config.domain
        if domain is None:
            in_domain = np.ones(len(exact), dtype=bool)
        else:
            in_domain = np.array([domain.contains(pt) for pt in exact])
        placed = similar_grid(self.grid, task.center, task.edge)
        sample = GridSample(grid=placed, graph=self.graph, coords=coords,
                            in_domain=in_domain, evaluations=None)
        for pt in exact:
            self.visited.add(pt)
        return sample, exact

    def evaluate(self, sample: GridSample, exact: list[tuple[Fraction, ...]]) -> None:
        values = np.full(len(exact), OUT_OF_DOMAIN, dtype=np.float64)
        miss_rows = []
        miss_keys = []
        for i, pt in enumerate(exact):
            if not sample.in_domain[i]:
                continue
            if self.config.cache_evaluations and pt in self.cache:
                values[i] = self.cache[pt]
                self.cache_hits += 1
            else:
                miss_rows.append(i)
                miss_keys.append(pt)
        if miss_rows:
            got = np.asarray(self.g(sample.coords[miss_rows]), dtype=np.float64)
            self.evaluations += len(miss_rows)
            for row, key, val in zip(miss_rows, miss_keys, np.atleast_1d(got)):
                values[row] = val
                if self.config.cache_evaluations:
                    self.cache[key] = float(val)
        sample.evaluations = values

    # -- the refinement rule ---------------------------------------------------

    def process(self, task: BoxTask, sample: GridSample,
                exact: list[tuple[Fraction, ...]], p: np.ndarray) -> None:
        tau = self.config.tau
        lam_min = self.config.lambda_min
        for i in np.where(p >= tau)[0]:
            pt = exact[i]
            lam_i = task.edge * self.refine_span[i]
            if not sample.in_domain[i]:
                if self.config.boundary_policy == "clip-stop":
                    self.troubled.setdefault(
                        pt,
                        TroubledPoint(
                            coords=tuple(float(x) for x in pt),
                            exact=pt,
                            trigger_lambda=lam_i,
                            boundary_stopped=True,
                        ),
                    )
                continue
            if lam_i >= lam_min:
                new = BoxTask(center=pt, edge=lam_i, depth=task.depth + 1)
                if new.key() not in self.seen:
                    self.seen.add(new.key())
                    self.pending.append(new)
            else:
                self.troubled.setdefault(
                    pt,
                    TroubledPoint(
                        coords=tuple(float(x) for x in pt),
                        exact=pt,
                        trigger_lambda=lam_i,
                    ),
                )

    def visit(self, task: BoxTask) -> tuple[GridSample, list]:
        sample, exact = self.build_sample(task)
        if self.detector.requires_evaluations:
            self.evaluate(sample, exact)
        self.grids_visited += 1
        return sample, exact

    def over_budget(self) -> bool:
        budget = self.config.max_evaluations
        return budget is not None and self.evaluations >= budget

    def result(self) -> DetectionRun:
        return DetectionRun(
            troubled=list(self.troubled.values()),
            generation_sizes=self.generation_sizes,
            visited_points=len(self.visited),
            evaluations=self.evaluations,
            cache_hits=self.cache_hits,
            detector_calls=self.detector_calls,
            grids_visited=self.grids_visited,
            truncated=self.truncated,
            config=self.config,
        )


def _seed_state(state: _EngineState, initial: Sequence, config: EngineConfig,
                grid: SparseGrid) -> None:
    tasks = []
    for center, edge in initial:
        tasks.append(BoxTask(
            center=tuple(_as_fraction(c) for c in center),
            edge=_as_fraction(edge),
            depth=0,
        ))
    if not tasks:
        raise EngineError("need at least one initial box")
    for t in tasks:
        if len(t.center) != grid.dim:
            raise DimensionMismatchError(
                f"initial center has dim {len(t.center)}, grid has dim {grid.dim}"
            )
        if config.domain is not None:
            box = Box(t.center, t.edge)
            if not (config.domain.contains(box.lower) and config.domain.contains(box.upper)):
                raise EngineError(
                    f"initial box centered at {tuple(map(float, t.center))} with edge "
                    f"{float(t.edge)} is not inside the domain"
                )
    _warn_off_lattice(tasks, grid.resolution)
    for t in tasks:
        if t.key() not in state.seen:
            state.seen.add(t.key())
            state.pending.append(t)


def _warn_off_lattice(tasks: list[BoxTask], m: int) -> None:
    """Initial grids placed off each other's lattice lose point sharing."""
    if len(tasks) < 2:
        return
    ref = tasks[0]
    step = ref.edge / m
    for t in tasks[1:]:
        if t.edge != ref.edge:
            continue
        for a, b in zip(t.center, ref.center):
            if (a - b) % step != 0:
                warnings.warn(
                    "initial grid centers are off-lattice relative to each other; "
                    "evaluation sharing between grids will be reduced",
                    stacklevel=3,
                )
                return


def run_basic(g: Callable, grid: SparseGrid, graph: GridGraph, detector: Detector,
              initial: Sequence, config: EngineConfig,
              visit_hook: Callable | None = None) -> DetectionRun:
    """Sequential engine: one grid classified per detector call (FIFO queue)."""
    state = _EngineState(grid, graph, detector, g, config)
    _seed_state(state, initial, config, grid)
    depth_sizes: dict[int, int] = {}
    while state.pending:
        if state.over_budget():
            state.truncated = True
            break
        task = state.pending.popleft()
        depth_sizes[task.depth] = depth_sizes.get(task.depth, 0) + 1
        sample, exact = state.visit(task)
        p = state.detector.detect(sample)
        state.detector_calls += 1
        if visit_hook is not None:
            visit_hook(task, sample, p)
        state.process(task, sample, exact, p)
    state.generation_sizes = [depth_sizes[d] for d in sorted(depth_sizes)]
    return state.result()


def run_batched(g: Callable, grid: SparseGrid, graph: GridGraph, detector: Detector,
                initial: Sequence, config: EngineConfig,
                visit_hook: Callable | None = None) -> DetectionRun:
    """Batched engine: every pending grid of a generation in one detector call.

    Semantics are identical to :func:`run_basic` for deterministic
    detectors; only the number of detector calls differs.
    """
    state = _EngineState(grid, graph, detector, g, config)
    _seed_state(state, initial, config, grid)
    while state.pending:
        if state.over_budget():
            state.truncated = True
            break
        generation = list(state.pending)
        state.pending.clear()
        state.generation_sizes.append(len(generation))
        samples = []
        exacts = []
        for task in generation:
            sample, exact = state.visit(task)
            samples.append(sample)
            exacts.append(exact)
        p_matrix = state.detector.detect_batch(samples)
        state.detector_calls += 1
        for task, sample, exact, p in zip(generation, samples, exacts, p_matrix):
            if visit_hook is not None:
                visit_hook(task, sample, p)
            state.process(task, sample, exact, p)
    return state.result()


# ---------------------------------------------------------------------------
# reports


def run_report(run: DetectionRun, extra: dict | None = None) -> dict:
    cfg = run.config
    doc = {
        "kind": "detection-run",
        "version": 1,
        "config": {
            "lambda_min": str(cfg.lambda_min),
            "tau": cfg.tau,
            "domain": None if cfg.domain is None else {
                "center": [str(c) for c in cfg.domain.center],
                "edge": str(cfg.domain.edge),
            },
            "boundary_policy": cfg.boundary_policy,
            "cache_evaluations": cfg.cache_evaluations,
            "lambda_rule": cfg.lambda_rule,
            "max_evaluations": cfg.max_evaluations,
        },
        "counters": {
            "troubled": len(run.troubled),
            "visited_points": run.visited_points,
            "evaluations": run.evaluations,
            "cache_hits": run.cache_hits,
            "detector_calls": run.detector_calls,
            "grids_visited": run.grids_visited,
        },
        "generation_sizes": run.generation_sizes,
        "truncated": run.truncated,
        "troubled_points": [
            {
                "coords": [float(x) for x in t.coords],
                "exact": [str(x) for x in t.exact],
                "lambda": str(t.trigger_lambda),
                "boundary_stopped": t.boundary_stopped,
            }
            for t in run.troubled
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def write_run_report(run: DetectionRun, path, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(run_report(run, extra), fh, indent=1)
        fh.write("\n")


def write_troubled_csv(run: DetectionRun, path) -> None:
    dim = len(run.troubled[0].coords) if run.troubled else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{d}" for d in range(dim)] + ["lambda", "boundary_stopped"])
        for t in run.troubled:
            writer.writerow([repr(float(x)) for x in t.coords]
                            + [float(t.trigger_lambda), int(t.boundary_stopped)])
