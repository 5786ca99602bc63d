"""Ablation protocol for the signature-layer robustness adjustments.

Covers the full combination grid (each adjustment omitted alone and in
pairs, everything omitted, frozen random weights, and sigmoid/tanh
substitutes for the activation choice), the per-step mean-absolute-value
signal analysis that exposes exploding states, and a trained comparison
grid over a shared dataset split.

Blow-ups are data here, not errors: any |z| above BLOWUP_THRESHOLD or any
non-finite state flags the row, and a flagged step keeps every later step
flagged.
"""

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .lspm import init_layer, mav_trace
from .model import count_parameters, init_model
from .numkernel import RngState
from .trainer import TrainConfig, TrainingDivergenceError, train

BLOWUP_THRESHOLD = 1e12


@dataclass(frozen=True)
class AblationConfig:
    omit_sparsity: bool = False
    omit_init: bool = False
    omit_activation: bool = False
    freeze_weights: bool = False
    activation_override: str = None  # None, "sigmoid", "tanh"
    label: str = ""

    def layer_kwargs(self):
        return dict(
            sparsity=not self.omit_sparsity,
            init=not self.omit_init,
            activation=not self.omit_activation,
            trainable=not self.freeze_weights,
            activation_override=self.activation_override,
        )


ABLATION_COMBOS = (
    AblationConfig(label="none (ours)"),
    AblationConfig(freeze_weights=True, label="trainability"),
    AblationConfig(omit_sparsity=True, omit_init=True, omit_activation=True,
                   label="all (original)"),
    AblationConfig(omit_sparsity=True, label="sparsity"),
    AblationConfig(omit_init=True, label="initialization"),
    AblationConfig(omit_activation=True, label="activation"),
    AblationConfig(omit_sparsity=True, omit_init=True, label="sparsity+initialization"),
    AblationConfig(omit_sparsity=True, omit_activation=True, label="sparsity+activation"),
    AblationConfig(omit_init=True, omit_activation=True, label="initialization+activation"),
    AblationConfig(activation_override="sigmoid", label="sigmoid"),
    AblationConfig(activation_override="tanh", label="tanh"),
)


def combo_seed(base_seed: int, cfg: AblationConfig) -> int:
    """Seed derived from the combo identity, so reordering the grid cannot
    change any row."""
    tag = (f"{cfg.omit_sparsity}|{cfg.omit_init}|{cfg.omit_activation}|"
           f"{cfg.freeze_weights}|{cfg.activation_override}")
    return (int(base_seed) * 1000003 + zlib.crc32(tag.encode())) % (2 ** 63)


def build_ablated_layer(n_coords: int, k: int, p: int, cfg: AblationConfig, rng: RngState):
    """Layer with the combo's adjustments omitted/substituted."""
    return init_layer(n_coords, k, p, rng, **cfg.layer_kwargs())


def run_mav_analysis(cfg: AblationConfig, h2: int, k_list, n_steps: int,
                     n_samples: int, rng: RngState):
    """Mean-absolute-value trace of the signature state on random paths.

    For each k: a fresh layer per the combo, driven by n_samples standard
    normal paths of n_steps x h2. Rows carry, per step, the batch-averaged
    mean/min/max of the per-component |z| plus the blow-up flag. Returns a
    list of dicts with keys k, step, mean, min, max, blowup.
    """
    if not k_list:
        raise ValueError("k_list must be non-empty")
    rows = []
    for k in k_list:
        sub = rng.derive(int(k))
        layer = build_ablated_layer(h2, int(k), 1, cfg, sub)
        x = sub.generator.normal(size=(n_samples, n_steps, h2))
        mav, per_k = mav_trace(layer, x)
        blown = False
        for step in range(n_steps):
            comp = per_k[step]
            step_bad = (not np.all(np.isfinite(comp))) or np.any(np.abs(comp) > BLOWUP_THRESHOLD)
            blown = blown or step_bad
            finite = comp[np.isfinite(comp)]
            rows.append({
                "k": int(k),
                "step": step + 1,
                "mean": float(mav[step, 0]) if np.isfinite(mav[step, 0]) else float("inf"),
                "min": float(finite.min()) if finite.size else float("inf"),
                "max": float(finite.max()) if finite.size else float("inf"),
                "blowup": blown,
            })
    return rows


def ablation_grid(task_builder, combos, split, base_cfg: TrainConfig,
                  model_kwargs: dict, base_seed: int = 0):
    """Train one model per combo on the shared split, identical budget.

    task_builder(model_kwargs, layer_flags, rng) must return a fresh model.
    Per-combo training failures become rows with an infinite validation MSE
    and a raised blow-up flag instead of aborting the grid. Returns a list
    of dicts with keys combo, flags, val_mse, params, blowup.
    """
    if not combos:
        raise ValueError("combos must be non-empty")
    rows = []
    for combo in combos:
        seed = combo_seed(base_seed, combo)
        rng = RngState(seed)
        model = task_builder(model_kwargs, combo.layer_kwargs(), rng)
        cfg = replace(base_cfg, seed=seed)
        blowup = False
        try:
            model, history = train(model, split, cfg)
            val_mse = float(np.min(history.val_metric))
            if not np.isfinite(val_mse):
                val_mse, blowup = float("inf"), True
        except (TrainingDivergenceError, FloatingPointError, OverflowError):
            val_mse, blowup = float("inf"), True
        rows.append({
            "combo": combo.label,
            "omit_sparsity": combo.omit_sparsity,
            "omit_init": combo.omit_init,
            "omit_activation": combo.omit_activation,
            "freeze_weights": combo.freeze_weights,
            "activation_override": combo.activation_override or "",
            "val_mse": val_mse,
            "params": count_parameters(model),
            "blowup": blowup,
        })
    return rows


def default_task_builder(model_kwargs, layer_flags, rng):
    """Model factory used by the command-line grid runner."""
    return init_model(
        rng=rng,
        sparsity=layer_flags["sparsity"],
        init_adjust=layer_flags["init"],
        activation_adjust=layer_flags["activation"],
        trainable=layer_flags["trainable"],
        activation_override=layer_flags["activation_override"],
        **model_kwargs,
    )
