"""Training loop: weighted BCE, Adam, plateau scheduler, early stopping.

The loss is the batch-averaged sum of component-wise binary cross
entropies with class weights mu1 (troubled) and mu0 (non-troubled);
predictions are clipped to [1e-7, 1 - 1e-7] so the loss stays finite.
Validation loss drives both the reduce-on-plateau learning-rate schedule
and early stopping with best-weights restoration.  All state is seeded,
so a fixed seed reproduces bit-identical trained parameters on the same
platform and thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sgdetect.errors import TrainingDivergedError
from sgdetect.neural.model import ArchetypeModel
from sgdetect.synth_data import DatasetSplit, preprocess_gamma_batch

CLIP = 1e-7


@dataclass
class TrainConfig:
    """Optimizer and schedule knobs."""

    mu0: float = 0.5
    mu1: float = 1.5
    batch_size: int = 64
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    plateau_factor: float = 0.75
    plateau_patience: int = 7
    early_stop_patience: int = 35
    restore_best: bool = True
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.mu0 <= 0 or self.mu1 <= 0:
            raise ValueError("loss weights must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


def weighted_bce(p_hat: np.ndarray, p: np.ndarray, mu0: float, mu1: float,
                 with_grad: bool = False):
    """Batch-averaged sum over components of the weighted binary cross entropy.

    Returns the scalar loss, or (loss, dL/dp_hat) when ``with_grad``; the
    gradient is zero where the prediction sits in the clipped region.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    batch = p_hat.shape[0]
    clipped = np.clip(p_hat, CLIP, 1.0 - CLIP)
    loss = float(
        np.sum(-mu1 * p * np.log(clipped) - mu0 * (1.0 - p) * np.log1p(-clipped)) / batch
    )
    if not with_grad:
        return loss
    inside = (p_hat > CLIP) & (p_hat < 1.0 - CLIP)
    grad = np.where(inside, (-mu1 * p / clipped + mu0 * (1.0 - p) / (1.0 - clipped)) / batch, 0.0)
    return loss, grad


class Adam:
    """Standard Adam with bias correction; learning rate passed per step."""

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` stale epochs."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.wait = 0

    def update(self, value: float) -> float:
        if value < self.best:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


class EarlyStopping:
    """Stop after ``patience`` stale epochs; snapshot best-validation weights."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.wait = 0
        self.best_params: list[np.ndarray] | None = None

    def update(self, value: float, params: list[np.ndarray]) -> bool:
        if value < self.best:
            self.best = value
            self.wait = 0
            self.best_params = [p.copy() for p in params]
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    epochs: int = 0
    stopped_early: bool = False

    def as_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "stopped_early": self.stopped_early,
        }


def _prepare(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.labels for s in samples]).astype(np.float64)
    return preprocess_gamma_batch(x), y


def train(model: ArchetypeModel, dataset: DatasetSplit, config: TrainConfig) -> TrainHistory:
    """Mini-batch Adam on the training set, validation-driven schedule.

    The stored raw evaluation vectors are preprocessed here (abs-max
    rescaling with sentinels zeroed), matching what the detector adapter
    feeds the model at inference time.
    """
    if not dataset.train or not dataset.validation:
        raise ValueError("training needs non-empty train and validation sets")
    x_train, y_train = _prepare(dataset.train)
    x_val, y_val = _prepare(dataset.validation)
    if x_train.shape[1] != model.n_points:
        raise ValueError(
            f"dataset has {x_train.shape[1]} points per sample, model expects {model.n_points}"
        )
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    adam = Adam(params, beta1=config.beta1, beta2=config.beta2)
    plateau = ReduceLROnPlateau(config.learning_rate, config.plateau_factor,
                                config.plateau_patience)
    stopper = EarlyStopping(config.early_stop_patience)
    history = TrainHistory()
    lr = config.learning_rate
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        batch_losses = []
        for lo in range(0, order.size, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            p_hat = model.forward(x_train[idx], training=True)
            loss, dp = weighted_bce(p_hat, y_train[idx], config.mu0, config.mu1,
                                    with_grad=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}",
                    diagnostics={
                        "epoch": epoch,
                        "batch_start": int(lo),
                        "learning_rate": lr,
                        "param_norms": [float(np.linalg.norm(p)) for p in params],
                    },
                )
            batch_losses.append(loss)
            model.backward(dp)
            adam.step(params, model.gradients(), lr)
        val_loss = evaluate_loss(model, x_val, y_val, config.mu0, config.mu1)
        history.train_loss.append(float(np.mean(batch_losses)))
        history.val_loss.append(val_loss)
        history.learning_rate.append(lr)
        history.epochs = epoch
        lr = plateau.update(val_loss)
        if stopper.update(val_loss, params):
            history.stopped_early = True
            break
    if config.restore_best and stopper.best_params is not None:
        model.set_parameters(stopper.best_params)
    model.history = history.as_dict()
    return history


def evaluate_loss(model: ArchetypeModel, x: np.ndarray, y: np.ndarray,
                  mu0: float, mu1: float) -> float:
    p_hat = model.predict(x)
    return weighted_bce(p_hat, y, mu0, mu1)


def predict_batch(model: ArchetypeModel, gamma_rows: np.ndarray) -> np.ndarray:
    """Batched inference P = model(Gamma); rows must be preprocessed already."""
    return model.predict(np.asarray(gamma_rows, dtype=np.float64))


def mean_absolute_error(model: ArchetypeModel, samples) -> float:
    x, y = _prepare(samples)
    return float(np.mean(np.abs(model.predict(x) - y)))


def evaluate_metrics(model: ArchetypeModel, samples, mu0: float = 0.5, mu1: float = 1.5) -> dict:
    x, y = _prepare(samples)
    p_hat = model.predict(x)
    return {
        "loss": weighted_bce(p_hat, y, mu0, mu1),
        "mae": float(np.mean(np.abs(p_hat - y))),
        "n_samples": int(x.shape[0]),
    }
