"""Residual architecture archetype shared by the MLP and GINN detectors.

The archetype is: input (N) -> hidden layer L1 with activation -> batch
norm -> floor(diam(G)/2) residual blocks -> final layer with sigmoid.
Each residual block is L' (activation) -> batch norm -> L'' (linear) ->
sum with the previous sum-stream output, activation -> batch norm; the
sum stream starts at L1's output.  GINN variants use graph-instructed
layers with F features per node, the final sigmoid output being mean
pooled over features so the per-node value stays in [0, 1]; MLP variants
use dense N-unit layers throughout.

A saved model file is self-contained: it stores the config, the grid
hash, the adjacency triples, every parameter tensor, the batch-norm
running statistics, and the training history, so loading never requires
rebuilding the grid.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from sgdetect.grid_graph import GridGraph, adjacency_triples
from sgdetect.neural.layers import BatchNorm, DenseLayer, GILayer, leaky_relu, leaky_relu_grad

MODEL_FILE_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs for the detector models."""

    kind: str = "ginn"  # "ginn" | "mlp"
    features: int = 15  # F, per-node features of GI hidden layers
    leaky_slope: float = 0.3
    init: str = "glorot_normal"

    def __post_init__(self):
        if self.kind not in ("ginn", "mlp"):
            raise ValueError(f"model kind must be 'ginn' or 'mlp', got {self.kind!r}")
        if self.features < 1:
            raise ValueError("features must be >= 1")


class ArchetypeModel:
    """One built archetype with explicit forward/backward passes."""

    def __init__(self, config: ModelConfig, n_points: int, n_blocks: int,
                 a_hat: np.ndarray | None, rng: np.random.Generator,
                 grid_key: str = "", grid_hash: str = "",
                 adjacency: list | None = None, diameter: int | None = None):
        self.config = config
        self.n_points = n_points
        self.n_blocks = n_blocks
        self.a_hat = a_hat
        self.grid_key = grid_key
        self.grid_hash = grid_hash
        self.adjacency = adjacency or []
        self.diameter = diameter
        self.history: dict = {}
        f = config.features
        if config.kind == "ginn":
            if a_hat is None:
                raise ValueError("GINN archetype needs the A + I matrix")
            self.l1 = GILayer(a_hat, k=1, f=f, rng=rng)
            self.bn1 = BatchNorm(f)
            self.blocks = []
            for _ in range(n_blocks):
                self.blocks.append((
                    GILayer(a_hat, k=f, f=f, rng=rng),
                    BatchNorm(f),
                    GILayer(a_hat, k=f, f=f, rng=rng),
                    BatchNorm(f),
                ))
            self.l_fin = GILayer(a_hat, k=f, f=f, rng=rng)
        else:
            n = n_points
            self.l1 = DenseLayer(n, n, rng)
            self.bn1 = BatchNorm(n)
            self.blocks = []
            for _ in range(n_blocks):
                self.blocks.append((
                    DenseLayer(n, n, rng),
                    BatchNorm(n),
                    DenseLayer(n, n, rng),
                    BatchNorm(n),
                ))
            self.l_fin = DenseLayer(n, n, rng)
        self._cache = None

    # -- parameter plumbing -------------------------------------------------

    def _layers(self):
        yield self.l1
        yield self.bn1
        for lp, bnp, lpp, bnpp in self.blocks:
            yield lp
            yield bnp
            yield lpp
            yield bnpp
        yield self.l_fin

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for layer in self._layers():
            out.extend(layer.grads())
        return out

    def set_parameters(self, values: list[np.ndarray]) -> None:
        for current, new in zip(self.parameters(), values):
            current[...] = new

    # -- forward / backward ---------------------------------------------------

    def _act(self, x):
        return leaky_relu(x, self.config.leaky_slope)

    def _act_grad(self, x):
        return leaky_relu_grad(x, self.config.leaky_slope)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Input (B, N) of preprocessed evaluations -> likelihoods (B, N)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_points:
            raise ValueError(f"expected (batch, {self.n_points}) input, got {x.shape}")
        ginn = self.config.kind == "ginn"
        h = x[:, :, None] if ginn else x
        a1_pre = self.l1.forward(h)
        s = self._act(a1_pre)
        z = self.bn1.forward(s, training)
        block_cache = []
        for lp, bnp, lpp, bnpp in self.blocks:
            u_pre = lp.forward(z)
            u = self._act(u_pre)
            v = bnp.forward(u, training)
            w = lpp.forward(v)
            s_pre = w + s
            s = self._act(s_pre)
            z = bnpp.forward(s, training)
            block_cache.append((u_pre, s_pre))
        fin_pre = self.l_fin.forward(z)
        q = expit(fin_pre)
        p = q.mean(axis=2) if ginn else q
        self._cache = (a1_pre, block_cache, q)
        return p

    def backward(self, dp: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss wrt the forward input; fills layer grads."""
        a1_pre, block_cache, q = self._cache
        ginn = self.config.kind == "ginn"
        if ginn:
            dq = np.repeat(dp[:, :, None], self.config.features, axis=2) / self.config.features
        else:
            dq = dp
        dz = self.l_fin.backward(dq * q * (1.0 - q))
        dskip = 0.0
        for (lp, bnp, lpp, bnpp), (u_pre, s_pre) in zip(reversed(self.blocks),
                                                        reversed(block_cache)):
            ds = bnpp.backward(dz) + dskip
            ds_pre = ds * self._act_grad(s_pre)
            dskip = ds_pre
            dv = lpp.backward(ds_pre)
            du = bnp.backward(dv)
            dz = lp.backward(du * self._act_grad(u_pre))
        da1 = self.bn1.backward(dz) + dskip
        dh = self.l1.backward(da1 * self._act_grad(a1_pre))
        return dh[:, :, 0] if ginn else dh

    def predict(self, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
        """Row-independent inference (batch norm on running statistics)."""
        x = np.asarray(x, dtype=np.float64)
        parts = [self.forward(x[lo : lo + chunk], training=False)
                 for lo in range(0, x.shape[0], chunk)]
        return np.concatenate(parts) if parts else np.zeros((0, self.n_points))


def build_archetype(config: ModelConfig, graph: GridGraph, seed: int = 0) -> ArchetypeModel:
    """Instantiate the archetype for a grid graph: depth = floor(diam/2) blocks."""
    diam = graph.diameter()
    n_blocks = diam // 2
    n = graph.n_points
    a_hat = None
    if config.kind == "ginn":
        a_hat = graph.adjacency_matrix().toarray() + np.eye(n)
    rng = np.random.default_rng(seed)
    model = ArchetypeModel(
        config=config,
        n_points=n,
        n_blocks=n_blocks,
        a_hat=a_hat,
        rng=rng,
        grid_key=graph.grid.spec.key(),
        grid_hash=grid_fingerprint(graph),
        adjacency=[[i, j, w] for i, j, w in adjacency_triples(graph)],
        diameter=diam,
    )
    return model


def grid_fingerprint(graph: GridGraph) -> str:
    """Stable hash of the grid's similarity class (spec + lattice)."""
    import hashlib

    grid = graph.grid
    payload = json.dumps(
        {"spec": grid.spec.key(), "resolution": grid.resolution,
         "lattice": [list(k) for k in grid.lattice]},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def count_parameters(model: ArchetypeModel, batchnorm: str = "trainable") -> int:
    """Trainable parameter count.

    ``batchnorm="trainable"`` counts batch-norm scale/shift (running
    statistics are never counted); ``batchnorm="none"`` skips batch-norm
    layers entirely.  Both conventions are exposed because published
    counts rarely say which one they use.
    """
    total = 0
    for layer in model._layers():
        if isinstance(layer, BatchNorm):
            if batchnorm == "trainable":
                total += layer.n_params
            elif batchnorm != "none":
                raise ValueError(f"unknown batchnorm convention {batchnorm!r}")
        else:
            total += layer.n_params
    return total


# ---------------------------------------------------------------------------
# model files


def _bn_state(bn: BatchNorm) -> dict:
    return {
        "gamma": bn.gamma.tolist(),
        "beta": bn.beta.tolist(),
        "running_mean": bn.running_mean.tolist(),
        "running_var": bn.running_var.tolist(),
    }


def _bn_load(bn: BatchNorm, state: dict) -> None:
    bn.gamma[...] = state["gamma"]
    bn.beta[...] = state["beta"]
    bn.running_mean[...] = state["running_mean"]
    bn.running_var[...] = state["running_var"]


def save_model(model: ArchetypeModel, path) -> Path:
    layers = []
    for layer in model._layers():
        if isinstance(layer, BatchNorm):
            layers.append({"type": "batchnorm", **_bn_state(layer)})
        elif isinstance(layer, GILayer):
            layers.append({"type": "gi", "k": layer.k, "f": layer.f,
                           "w": layer.w.tolist(), "b": layer.b.tolist()})
        else:
            layers.append({"type": "dense", "w": layer.w.tolist(), "b": layer.b.tolist()})
    doc = {
        "kind": "detector-model",
        "version": MODEL_FILE_VERSION,
        "config": asdict(model.config),
        "n_points": model.n_points,
        "n_blocks": model.n_blocks,
        "diameter": model.diameter,
        "grid_key": model.grid_key,
        "grid_hash": model.grid_hash,
        "adjacency": model.adjacency,
        "layers": layers,
        "history": model.history,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return path


def load_model(path) -> ArchetypeModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FILE_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')}")
    config = ModelConfig(**doc["config"])
    n = doc["n_points"]
    a_hat = None
    if config.kind == "ginn":
        a_hat = np.eye(n)
        for i, j, w in doc["adjacency"]:
            a_hat[i, j] = w
            a_hat[j, i] = w
    model = ArchetypeModel(
        config=config,
        n_points=n,
        n_blocks=doc["n_blocks"],
        a_hat=a_hat,
        rng=np.random.default_rng(0),
        grid_key=doc.get("grid_key", ""),
        grid_hash=doc.get("grid_hash", ""),
        adjacency=doc.get("adjacency", []),
        diameter=doc.get("diameter"),
    )
    model.history = doc.get("history", {})
    for layer, state in zip(model._layers(), doc["layers"]):
        if state["type"] == "batchnorm":
            _bn_load(layer, state)
        else:
            layer.w[...] = state["w"]
            layer.b[...] = state["b"]
    return model


__all__ = [
    "ArchetypeModel",
    "ModelConfig",
    "build_archetype",
    "count_parameters",
    "grid_fingerprint",
    "load_model",
    "save_model",
]
