"""Losses, Adam/LAMB optimizers, cosine schedule, the training loop with
early stopping and permutation augmentation, evaluation metrics, and the
trivial baselines used for comparison.

Training is bit-reproducible for a fixed seed: shuffling and augmentation
draw from sub-streams derived per epoch, batches are visited in shuffle
order, and gradient reductions run in fixed index order.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import model_backward, model_forward
from .numkernel import RngState


class TrainingDivergenceError(RuntimeError):
    """Loss left the finite range during training."""

    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adam"  # "adam" or "lamb"
    cosine_schedule: bool = False
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augmentation: bool = False


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self):
        lines = ["epoch,train_loss,val_metric,lr"]
        for i, (tl, vm, lr) in enumerate(zip(self.train_loss, self.val_metric, self.lr), 1):
            lines.append(f"{i},{tl:.10e},{vm:.10e},{lr:.10e}")
        return "\n".join(lines) + "\n"


def mse_loss(pred, target):
    """Mean squared error over all entries, with its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def cross_entropy_loss(logits, label):
    """Negative log-softmax of the true class, with its gradient."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    label = int(label)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    shifted = logits - np.max(logits)
    logz = np.log(np.sum(np.exp(shifted)))
    loss = float(logz - shifted[label])
    probs = np.exp(shifted - logz)
    grad = probs
    grad[label] -= 1.0
    return loss, grad


def _cross_entropy_batch(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-logp[np.arange(labels.size), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(labels.size), labels] -= 1.0
    return loss, grad / labels.size


def init_optimizer_state(params):
    return {
        "step": 0,
        "m": {name: np.zeros_like(t) for name, t in params.items()},
        "v": {name: np.zeros_like(t) for name, t in params.items()},
    }


def _adam_direction(params, grads, state, beta1, beta2, eps, weight_decay):
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    directions = {}
    for name, p in params.items():
        if name not in grads:
            continue
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        direction = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay != 0.0:
            direction = direction + weight_decay * p
        directions[name] = direction
    return directions


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Adam with bias correction and decoupled weight decay, in place.

    Tensors absent from `grads` (frozen) are skipped entirely.
    """
    for name, direction in _adam_direction(params, grads, state, betas[0], betas[1],
                                           eps, weight_decay).items():
        params[name] -= lr * direction


def lamb_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Adam direction rescaled per tensor by the trust ratio
    ||param|| / ||direction||, clipped to [0, 10]; a zero norm on either
    side makes the ratio 1."""
    directions = _adam_direction(params, grads, state, betas[0], betas[1],
                                 eps, weight_decay)
    for name, direction in directions.items():
        p = params[name]
        p_norm = float(np.linalg.norm(p))
        d_norm = float(np.linalg.norm(direction))
        if p_norm == 0.0 or d_norm == 0.0:
            trust = 1.0
        else:
            trust = min(max(p_norm / d_norm, 0.0), 10.0)
        p -= lr * trust * direction


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))


def _stack_samples(samples):
    inputs = np.stack([np.asarray(s[0], dtype=np.float64) for s in samples])
    first_target = samples[0][1]
    if np.isscalar(first_target) or np.asarray(first_target).ndim == 0:
        targets = np.array([int(s[1]) for s in samples], dtype=np.intp)
    else:
        targets = np.stack([np.asarray(s[1], dtype=np.float64) for s in samples])
    return inputs, targets


def _batch_loss(model, xb, yb):
    pred, cache = model_forward(model, xb)
    if model.head == "classification":
        loss, d_pred = _cross_entropy_batch(pred, yb)
    else:
        loss, d_pred = mse_loss(pred, yb)
    return loss, d_pred, cache


def _mean_loss(model, inputs, targets, chunk=64):
    total = 0.0
    for start in range(0, inputs.shape[0], chunk):
        xb = inputs[start:start + chunk]
        yb = targets[start:start + chunk]
        loss, _, _ = _batch_loss(model, xb, yb)
        total += loss * xb.shape[0]
    return total / inputs.shape[0]


def _augment_pairwise(xb, yb, gen):
    """Fresh node permutation per sample: input columns and target rows
    and columns move together."""
    xa = np.empty_like(xb)
    ya = np.empty_like(yb)
    n = xb.shape[2]
    for i in range(xb.shape[0]):
        perm = gen.permutation(n)
        xa[i] = xb[i][:, perm]
        ya[i] = yb[i][np.ix_(perm, perm)]
    return xa, ya


def train(model, split, cfg: TrainConfig):
    """Mini-batch training with per-epoch validation and early stopping.

    Keeps the parameters of the best validation epoch and restores them
    before returning (model, history). Stops once the epochs since the
    best validation result exceed cfg.patience.
    """
    if cfg.optimizer not in ("adam", "lamb"):
        raise ValueError(f"unknown optimizer: {cfg.optimizer}")
    step_fn = adam_step if cfg.optimizer == "adam" else lamb_step

    train_x, train_y = _stack_samples(split.train)
    val_x, val_y = _stack_samples(split.val)
    params = model.parameters()
    state = init_optimizer_state(params)
    history = TrainHistory()
    base_rng = RngState(cfg.seed)

    best_val = np.inf
    best_params = {name: t.copy() for name, t in params.items()}
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        ep_rng = base_rng.derive(epoch)
        order = ep_rng.generator.permutation(train_x.shape[0])
        lr = (cosine_lr(epoch - 1, cfg.max_epochs, cfg.lr, cfg.lr_min)
              if cfg.cosine_schedule else cfg.lr)

        epoch_loss = 0.0
        for bidx, start in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            if cfg.augmentation and model.head == "pairwise-regression":
                xb, yb = _augment_pairwise(xb, yb, ep_rng.generator)
            loss, d_pred, cache = _batch_loss(model, xb, yb)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, bidx, loss)
            grads = model_backward(model, cache, d_pred)
            step_fn(params, grads, state, lr, betas=(cfg.beta1, cfg.beta2),
                    eps=cfg.eps, weight_decay=cfg.weight_decay)
            epoch_loss += loss * idx.size

        val_metric = _mean_loss(model, val_x, val_y)
        history.train_loss.append(epoch_loss / order.size)
        history.val_metric.append(val_metric)
        history.lr.append(lr)

        if val_metric < best_val:
            best_val = val_metric
            best_params = {name: t.copy() for name, t in params.items()}
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break

    model.set_parameters(best_params)
    return model, history


def evaluate(model, samples, metric: str = "mse", chunk: int = 64) -> float:
    """Mean metric over samples: 'mse' or 'accuracy' (argmax-correct rate)."""
    inputs, targets = _stack_samples(samples)
    if metric == "mse":
        if model.head == "classification":
            raise ValueError("mse metric is incompatible with the classification head")
        total = 0.0
        for start in range(0, inputs.shape[0], chunk):
            pred, _ = model_forward(model, inputs[start:start + chunk])
            diff = pred - targets[start:start + chunk]
            total += float(np.sum(diff * diff)) / np.prod(pred.shape[1:])
        return total / inputs.shape[0]
    if metric == "accuracy":
        if model.head != "classification":
            raise ValueError("accuracy metric needs the classification head")
        correct = 0
        for start in range(0, inputs.shape[0], chunk):
            pred, _ = model_forward(model, inputs[start:start + chunk])
            correct += int(np.sum(np.argmax(pred, axis=1) == targets[start:start + chunk]))
        return correct / inputs.shape[0]
    raise ValueError(f"unknown metric: {metric}")


def baseline_predict(kind: str, train_samples, eval_samples=None) -> float:
    """MSE of a trivial predictor: 'target-mean' predicts the training-set
    mean target everywhere; 'persistence' repeats each sample's last input
    row across the target horizon."""
    if eval_samples is None:
        eval_samples = train_samples
    if kind == "target-mean":
        _, train_y = _stack_samples(train_samples)
        mean_target = train_y.mean(axis=0)
        _, eval_y = _stack_samples(eval_samples)
        diff = eval_y - mean_target
        return float(np.mean(diff * diff))
    if kind == "persistence":
        total = 0.0
        for inp, target in eval_samples:
            inp = np.asarray(inp, dtype=np.float64)
            target = np.asarray(target, dtype=np.float64)
            pred = np.repeat(inp[-1:], target.shape[0], axis=0)
            total += float(np.mean((pred - target) ** 2))
        return total / len(eval_samples)
    raise ValueError(f"unknown baseline: {kind}")
