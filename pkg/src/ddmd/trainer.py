"""Joint training of the neural dictionary and the Koopman operator.

The objective for a minibatch of one-step pairs ``(y_t, y_{t+1})`` is

    mean ||psi(y_{t+1}) - K psi(y_t)||^2 + lambda1 ||K||_F^2 + lambda2 sum|theta|

where ``psi = [y, net(y)]``. Both lifts of a pair share one dropout mask.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .edmd import KoopmanModel, Snapshots, build_snapshots
from .errors import InvalidArgument, NumericalFailure
from .metrics import METRIC_DEFINITION, one_step_pairs, one_step_percent_error
from .neural import MlpGrads, MlpParams, MlpSpec, NeuralDictionary, backward, draw_masks, forward, init_params
from .numerics import Rng, pinv

ADAGRAD_EPS = 1e-8
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
MIN_STABLE_BATCH = 10


@dataclass
class TrainConfig:
    optimizer: str = "adagrad"
    learning_rate: float = 0.01
    batch_size: int = 64
    iterations: int = 10000
    lambda1: float = 0.0
    lambda2: float = 0.0
    shuffle: bool = True
    seed: int = 0
    dropout_rate: float = None  # None keeps the MlpSpec rate
    k_update: str = "joint-gradient"
    eval_every: int = 500
    select: str = "last"  # or "best-train": keep the eval point with lowest train error

    def __post_init__(self):
        if self.optimizer not in ("adagrad", "adam"):
            raise InvalidArgument("optimizer must be adagrad or adam")
        if self.k_update not in ("joint-gradient", "alternating-least-squares"):
            raise InvalidArgument("k_update must be joint-gradient or alternating-least-squares")
        if self.select not in ("last", "best-train"):
            raise InvalidArgument("select must be last or best-train")
        if self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidArgument("need batch_size >= 1 and learning_rate > 0")
        if self.iterations < 0 or self.eval_every < 1:
            raise InvalidArgument("need iterations >= 0 and eval_every >= 1")


@dataclass
class TrainState:
    params: MlpParams
    k: np.ndarray
    moments: list  # adagrad: [G]; adam: [m, v] per array
    iteration: int = 0

    def arrays(self) -> list:
        return self.params.weights + self.params.biases + [self.k]


@dataclass
class TrainReport:
    loss_curve: list = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    converged: bool = False
    warnings: list = field(default_factory=list)
    metric: str = METRIC_DEFINITION
    selected_iteration: int = None

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingAborted(NumericalFailure):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def new_state(spec: MlpSpec, optimizer: str, rng: Rng) -> TrainState:
    params = init_params(spec, rng)
    k = np.zeros((spec.lifted_dim, spec.lifted_dim))
    state = TrainState(params, k, [])
    per = 1 if optimizer == "adagrad" else 2
    state.moments = [[np.zeros_like(a) for _ in range(per)] for a in state.arrays()]
    return state


def batch_loss_and_grads(spec: MlpSpec, state: TrainState, y0, y1, config: TrainConfig, masks=None):
    """Loss and exact gradients for one minibatch.

    Returns ``(loss, MlpGrads, dK)``. ``masks`` are the per-sample dropout
    masks applied to both lifts; ``None`` means no dropout.
    """
    y0 = np.atleast_2d(y0)
    y1 = np.atleast_2d(y1)
    if y0.shape[0] == 0:
        raise InvalidArgument("empty batch")
    b = y0.shape[0]
    mode = "train" if masks is not None else "eval"
    z0, tape0 = forward(spec, state.params, y0, mode, masks=masks)
    z1, tape1 = forward(spec, state.params, y1, mode, masks=masks)
    k = state.k
    resid = z1 - z0 @ k.T
    theta = state.params.arrays()
    loss = float(np.sum(resid**2) / b)
    loss += config.lambda1 * float(np.sum(k**2))
    if config.lambda2:
        loss += config.lambda2 * float(sum(np.abs(a).sum() for a in theta))
    if not np.isfinite(loss):
        raise NumericalFailure(f"non-finite loss at iteration {state.iteration}")
    scale = 2.0 / b
    dk = -scale * resid.T @ z0 + 2.0 * config.lambda1 * k
    g1 = backward(spec, state.params, tape1, scale * resid)
    g0 = backward(spec, state.params, tape0, -scale * resid @ k)
    gw = [a + c for a, c in zip(g1.weights, g0.weights)]
    gb = [a + c for a, c in zip(g1.biases, g0.biases)]
    if config.lambda2:
        gw = [g + config.lambda2 * np.sign(w) for g, w in zip(gw, state.params.weights)]
        gb = [g + config.lambda2 * np.sign(w) for g, w in zip(gb, state.params.biases)]
    return loss, MlpGrads(gw, gb, g1.input + g0.input), dk


def _grad_list(grads: MlpGrads, dk, update_k: bool) -> list:
    return grads.weights + grads.biases + [dk if update_k else None]


def adagrad_step(state: TrainState, grads: list, lr: float) -> TrainState:
    """``x -= lr * g / sqrt(G + eps)`` with ``G`` the running sum of squared gradients."""
    for x, g, (acc,) in zip(state.arrays(), grads, state.moments):
        if g is None:
            continue
        acc += g * g
        x -= lr * g / np.sqrt(acc + ADAGRAD_EPS)
    state.iteration += 1
    return state


def adam_step(state: TrainState, grads: list, lr: float) -> TrainState:
    t = state.iteration + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for x, g, (m, v) in zip(state.arrays(), grads, state.moments):
        if g is None:
            continue
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        x -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    state.iteration = t
    return state


def refit_k(snapshots: Snapshots, lambda1: float) -> np.ndarray:
    """Exact minimiser of ``(1/M)||Y_f - K Y_p||^2 + lambda1 ||K||^2`` for fixed lifts."""
    yp, yf, M = snapshots.yp, snapshots.yf, snapshots.M
    if lambda1 == 0.0:
        return (pinv(yp.T) @ yf.T).T
    gram = yp @ yp.T + M * lambda1 * np.eye(snapshots.m)
    return np.linalg.solve(gram, yp @ yf.T).T


def full_loss(spec, params, k, trajectories, lambda1=0.0, lambda2=0.0) -> float:
    """Objective over every training pair with eval-mode lifts."""
    y0, y1 = one_step_pairs(trajectories)
    z0 = forward(spec, params, y0)[0]
    z1 = forward(spec, params, y1)[0]
    loss = np.sum((z1 - z0 @ k.T) ** 2) / y0.shape[0] + lambda1 * np.sum(k**2)
    if lambda2:
        loss += lambda2 * sum(np.abs(a).sum() for a in params.arrays())
    return float(loss)


def _model(spec, params, k, meta) -> KoopmanModel:
    return KoopmanModel(k.copy(), NeuralDictionary(spec, params.copy()), dict(meta))


def train(dataset, mlp_spec: MlpSpec, config: TrainConfig, log=None):
    """Train dictionary and operator; returns ``(KoopmanModel, TrainReport)``.

    ``dataset`` is a :class:`~ddmd.systems.Dataset` (errors are tracked on
    both splits) or a plain list of training trajectories. ``log`` receives
    each loss-curve record as it is produced.
    """
    start = time.perf_counter()
    train_set = dataset.train if hasattr(dataset, "train") else list(dataset)
    test_set = dataset.test if hasattr(dataset, "test") else []
    spec = mlp_spec
    if config.dropout_rate is not None and config.dropout_rate != spec.dropout_rate:
        spec = MlpSpec(spec.input_dim, spec.hidden_widths, spec.output_width, spec.activation,
                       config.dropout_rate, spec.residual)
    report = TrainReport(config=asdict(config))
    report.config["mlp"] = spec.to_dict()
    if config.batch_size < MIN_STABLE_BATCH:
        report.warnings.append(f"batch_size {config.batch_size} < {MIN_STABLE_BATCH}: training may not converge")

    y0_all, y1_all = one_step_pairs(train_set)
    n_pairs = y0_all.shape[0]
    if n_pairs < config.batch_size:
        raise InvalidArgument(f"{n_pairs} training pairs is fewer than batch_size {config.batch_size}")

    root = Rng(config.seed)
    state = new_state(spec, config.optimizer, root.child("init"))
    shuffle_rng = root.child("shuffle")
    dropout_rng = root.child("dropout")
    update_k = config.k_update == "joint-gradient"
    step = adagrad_step if config.optimizer == "adagrad" else adam_step
    per_epoch = n_pairs // config.batch_size
    meta = {"method": "ddmd", "seed": config.seed, "train_config": asdict(config)}
    best = None

    def refit():
        state.k = refit_k(build_snapshots(train_set, NeuralDictionary(spec, state.params)), config.lambda1)

    def evaluate(batch_loss):
        if not update_k and state.iteration > 0:
            # the K-step is exact for fixed lifts; score the operator matched to the current dictionary
            refit()
        model = _model(spec, state.params, state.k, meta)
        rec = {
            "iteration": state.iteration,
            "batch_loss": batch_loss,
            "train_loss": full_loss(spec, state.params, state.k, train_set, config.lambda1, config.lambda2),
            "train_error": one_step_percent_error(model, train_set),
            "test_error": one_step_percent_error(model, test_set) if test_set else None,
        }
        for key in ("train_loss", "train_error"):
            if not np.isfinite(rec[key]):
                raise NumericalFailure(f"non-finite {key} at iteration {state.iteration}")
        if report.loss_curve and report.loss_curve[-1]["iteration"] == rec["iteration"]:
            report.loss_curve[-1] = rec
        else:
            report.loss_curve.append(rec)
        if log is not None:
            log(rec)
        return model, rec

    order = np.arange(n_pairs)
    batch_loss = None
    try:
        model, rec = evaluate(None)
        best = (rec["train_error"], model, rec["iteration"])
        for it in range(config.iterations):
            pos = it % per_epoch
            if pos == 0:
                if config.shuffle:
                    order = shuffle_rng.permutation(n_pairs)
                if not update_k:
                    refit()
            idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
            masks = draw_masks(spec, idx.size, dropout_rng) if spec.dropout_rate > 0 else None
            batch_loss, grads, dk = batch_loss_and_grads(spec, state, y0_all[idx], y1_all[idx], config, masks)
            step(state, _grad_list(grads, dk, update_k), config.learning_rate)
            if state.iteration % config.eval_every == 0 or state.iteration == config.iterations:
                model, rec = evaluate(batch_loss)
                if rec["train_error"] < best[0]:
                    best = (rec["train_error"], model, rec["iteration"])
    except NumericalFailure as exc:
        report.wall_time = time.perf_counter() - start
        raise TrainingAborted(f"training aborted: {exc}", report) from exc

    report.converged = True
    report.wall_time = time.perf_counter() - start
    if config.select == "best-train":
        model = best[1]
        report.selected_iteration = best[2]
    else:
        report.selected_iteration = state.iteration
    model.meta["selected_iteration"] = report.selected_iteration
    return model, report
