"""Training, inference, layer freezing and gradient verification."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from ..volume import SLICE_AXIS, LabelMap, Volume
from . import tape as T
from .state import NetConfig, NetState, TrainConfig
from .unet import build_unet2d, build_unet3d, unet_forward
from .unetr import build_unetr, unetr_forward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
INTENSITY_SCALE = 255.0


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, learning_rate: float, loss: float):
        self.step = step
        self.learning_rate = learning_rate
        super().__init__(f"non-finite loss {loss} at step {step} (learning rate {learning_rate})")


def build(cfg: NetConfig) -> NetState:
    return {"unet2d": build_unet2d, "unet3d": build_unet3d, "unetr": build_unetr}[cfg.kind](cfg)


def forward(state: NetState, x: np.ndarray, rng=None, dropout_rate=None, grad: bool = False,
            record=None):
    """Logits for ``x``; with ``grad=True`` also the parameter tensors.

    Frozen parameters enter as constants, so they never receive gradient.
    """
    P = {}
    for name, value in state.params.items():
        P[name] = T.param(value) if grad and name not in state.frozen else T.const(value)
    xt = T.const(np.asarray(x, dtype=state.config.dtype))
    cfg = state.config
    if cfg.kind == "unetr":
        out = unetr_forward(P, xt, cfg, rng, dropout_rate, record)
    else:
        out = unet_forward(P, xt, cfg, rng, dropout_rate)
    return (out, P) if grad else out


def freeze_prefix(state: NetState, n_layers: int) -> NetState:
    """Copy of ``state`` with the first ``n_layers`` parameterized layers frozen."""
    if not 0 <= n_layers <= state.layer_count:
        raise ValueError(f"n_layers must be in [0, {state.layer_count}], got {n_layers}")
    out = state.copy()
    out.frozen = {p for _, names in state.layers[:n_layers] for p in names}
    return out


def soft_dice_loss(pred: np.ndarray, target: np.ndarray, eps: float = 1e-5):
    """``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`` and its gradient w.r.t. ``pred``."""
    return T.soft_dice(pred, target, eps)


def loss_and_grads(state: NetState, x, target, eps, rng=None, dropout_rate=None):
    logits, P = forward(state, x, rng, dropout_rate, grad=True)
    prob = T.sigmoid(logits)
    loss, g = soft_dice_loss(prob.value, np.asarray(target, prob.value.dtype), eps)
    prob.backward(g)
    grads = {}
    for name, t in P.items():
        if name in state.frozen:
            continue
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.value)
    return loss, grads


def adam_update(state: NetState, grads: dict, lr: float) -> None:
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        if name in state.frozen:
            continue
        m = state.adam_m.get(name)
        v = state.adam_v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * (g * g)
        state.adam_m[name] = m
        state.adam_v[name] = v
        if lr == 0:
            continue
        step = lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        state.params[name] = (state.params[name] - step).astype(state.params[name].dtype)


def to_input(v: Volume, cfg: NetConfig) -> np.ndarray:
    """Network input for a volume: intensities scaled from [0, 255] to [0, 1].

    3D nets get ``(1, 1, D, H, W)``; the 2D net gets one batch entry per
    sagittal slice, ``(nz, 1, nx, ny)``.
    """
    x = v.data.astype(cfg.dtype) / INTENSITY_SCALE
    if cfg.kind == "unet2d":
        return np.moveaxis(x, SLICE_AXIS, 0)[:, None]
    return x[None, None]


def to_target(label: LabelMap, cfg: NetConfig) -> np.ndarray:
    y = label.data.astype(cfg.dtype)
    if cfg.kind == "unet2d":
        return np.moveaxis(y, SLICE_AXIS, 0)[:, None]
    return y[None, None]


def _check_dims(v, cfg: NetConfig):
    dims = v.meta.dims
    expected = cfg.input_dims
    got = dims if cfg.kind != "unet2d" else tuple(d for a, d in enumerate(dims) if a != SLICE_AXIS)
    if tuple(got) != tuple(expected):
        raise ValueError(f"volume dims {dims} do not match network input {cfg.input_dims}")


def train(state: NetState, dataset, tc: TrainConfig, callback=None):
    """Adam on the soft-Dice loss for ``epochs * steps_per_epoch`` steps.

    Each epoch visits the samples in a seeded random order (cycling when
    there are more steps than samples); dropout masks come from the same
    seed. Returns ``(new_state, per_step_losses)``; the input state is
    left untouched.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training needs at least one sample")
    cfg = state.config
    for v, lab in dataset:
        _check_dims(v, cfg)
        _check_dims(lab, cfg)
    inputs = [(to_input(v, cfg), to_target(lab, cfg)) for v, lab in dataset]
    state = state.copy()
    order_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0x0BA7]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xD409]))
    history = []
    step = 0
    for _ in range(tc.epochs):
        perm = order_rng.permutation(len(inputs))
        for s in range(tc.steps_per_epoch):
            x, y = inputs[perm[s % len(perm)]]
            loss, grads = loss_and_grads(state, x, y, tc.loss_eps, drop_rng, tc.dropout_rate)
            step += 1
            if not math.isfinite(loss):
                raise TrainingDiverged(step, tc.learning_rate, loss)
            adam_update(state, grads, tc.learning_rate)
            history.append(loss)
            if callback is not None:
                callback(step, loss)
    return state, history


def _logit_threshold(threshold: float) -> float:
    if threshold <= 0:
        return -math.inf
    if threshold >= 1:
        return math.inf
    return math.log(threshold / (1.0 - threshold))


def predict_proba(net: NetState, x: np.ndarray) -> np.ndarray:
    """Sigmoid outputs for a network-shaped input array, dropout disabled."""
    return T.sigmoid(forward(net, x, dropout_rate=0.0)).value


def predict_slicewise(net2d: NetState, v: Volume, threshold: float = 0.5) -> LabelMap:
    """Run the 2D net on every sagittal slice independently and restack."""
    cfg = net2d.config
    if cfg.kind != "unet2d":
        raise ValueError("predict_slicewise needs a unet2d network")
    _check_dims(v, cfg)
    logits = forward(net2d, to_input(v, cfg), dropout_rate=0.0).value[:, 0]
    mask = logits > _logit_threshold(threshold)
    return LabelMap(v.meta, np.moveaxis(mask, 0, SLICE_AXIS).astype(np.uint8))


def predict_volume(net: NetState, v: Volume, threshold: float = 0.5) -> LabelMap:
    """Single forward pass of a 3D network; foreground where sigmoid > threshold."""
    cfg = net.config
    if cfg.kind == "unet2d":
        raise ValueError("predict_volume needs a 3D network; use predict_slicewise")
    _check_dims(v, cfg)
    logits = forward(net, to_input(v, cfg), dropout_rate=0.0).value[0, 0]
    return LabelMap(v.meta, (logits > _logit_threshold(threshold)).astype(np.uint8))


def predict(net: NetState, v: Volume, threshold: float = 0.5) -> LabelMap:
    if net.config.kind == "unet2d":
        return predict_slicewise(net, v, threshold)
    return predict_volume(net, v, threshold)


# -- gradient verification -------------------------------------------------

GRAD_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check_fn(fn, arrays: list, h: float = 1e-5, max_entries: int = 300,
                  seed: int = 0, floor: float = 1e-8) -> float:
    """Worst relative error for a tape function ``fn(*tensors) -> Tensor``.

    The scalar objective is ``sum(R * fn(...))`` for a fixed random ``R``,
    which exercises every output entry. Arrays are perturbed in place and
    restored.
    """
    rng = np.random.default_rng(seed)
    ts = [T.param(a) for a in arrays]
    out = fn(*ts)
    R = rng.standard_normal(out.shape)
    out.backward(R)

    def objective():
        return float((fn(*[T.const(a) for a in arrays]).value * R).sum())

    worst = 0.0
    for a, t in zip(arrays, ts):
        n = a.size
        pick = range(n) if n <= max_entries else sorted(rng.choice(n, max_entries, replace=False))
        for flat in pick:
            idx = np.unravel_index(flat, a.shape)
            old = a[idx]
            a[idx] = old + h
            lp = objective()
            a[idx] = old - h
            lm = objective()
            a[idx] = old
            g = 0.0 if t.grad is None else float(t.grad[idx])
            worst = max(worst, relative_error(g, (lp - lm) / (2 * h), floor))
    return worst


def grad_check(state: NetState, sample, h: float = 1e-5, per_layer: int = 200,
               seed: int = 0, eps: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    ``sample`` is ``(x, target)`` as network arrays. Up to ``per_layer``
    randomly chosen entries of every layer's parameters are perturbed (all
    of them when the layer has fewer). The objective is the soft-Dice
    loss with dropout disabled; the state must be double precision.
    Frozen parameters are reported with analytic gradient 0.
    """
    if state.config.precision != "double":
        raise ValueError("grad_check requires a double-precision state")
    x, y = sample
    errors = grad_errors(state, x, y, h, per_layer, seed, eps)
    return max((e.error for e in errors), default=0.0)


@dataclass(frozen=True)
class GradEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    h: float
    error: float


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_errors(state: NetState, x, y, h=1e-5, per_layer=200, seed=0, eps=1e-5,
                floor=GRAD_FLOOR, min_h=1e-9) -> list[GradEntry]:
    """Per-entry comparison backing :func:`grad_check`.

    ReLU and max-pool make the loss piecewise smooth. A central difference
    is only meaningful when both evaluations stay on the same piece as the
    base point, so ``h`` is divided by 10 for an entry until the ReLU masks
    and pooling choices at ``theta +- h`` match the base pass (down to
    ``min_h``).
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(state, x, y, eps, None, 0.0)

    def objective():
        with T.record_pattern() as pat:
            prob = T.sigmoid(forward(state, x, dropout_rate=0.0)).value
        return soft_dice_loss(prob, np.asarray(y, prob.dtype), eps)[0], pat

    _, base = objective()
    out = []
    for _, names in state.layers:
        entries = [(n, i) for n in names for i in range(state.params[n].size)]
        if len(entries) > per_layer:
            pick = rng.choice(len(entries), size=per_layer, replace=False)
            entries = [entries[i] for i in sorted(pick)]
        for name, flat in entries:
            arr = state.params[name]
            idx = np.unravel_index(flat, arr.shape)
            old = arr[idx]
            step = h
            while True:
                arr[idx] = old + step
                lp, pp = objective()
                arr[idx] = old - step
                lm, pm = objective()
                arr[idx] = old
                if step / 10 < min_h or (_same_pattern(pp, base) and _same_pattern(pm, base)):
                    break
                step /= 10
            numeric = (lp - lm) / (2 * step)
            analytic = 0.0 if name in state.frozen else float(grads[name][idx])
            out.append(GradEntry(name, tuple(int(i) for i in idx), analytic, numeric, step,
                                 relative_error(analytic, numeric, floor)))
    return out


# -- grid search -----------------------------------------------------------

SEARCH_GRID = {
    "epochs": [60, 100, 200, 700, 1000, 1500, 50000],
    "steps_per_epoch": [50, 100, 150, 200],
    "learning_rate": [1e-4, 3e-4, 3e-5, 1e-5],
    "dropout_rate": [0.0, 0.1, 0.5],
    "frozen_layers": [3, 5, 10, 15, 20, 25, 30, 35],
}


@dataclass(frozen=True)
class GridResult:
    rank: int
    cell: int
    params: dict
    train_steps: int
    val_dice: float
    final_loss: float


def _mean_dice(net, pairs, threshold=0.5):
    from ..metrics import dice

    return float(np.mean([dice(predict(net, v, threshold), lab) for v, lab in pairs]))


def grid_search(grids: dict, train_set, val_set, budget: int, net_cfg: NetConfig,
                pretrained: NetState | None = None, max_steps: int = 20, seed: int = 0):
    """Train up to ``budget`` cells of the Cartesian grid and rank them by validation Dice.

    Cells are visited in a seeded shuffle of the product order. At desk
    scale each cell trains for ``min(epochs * steps_per_epoch, max_steps)``
    steps. ``frozen_layers`` only applies when ``pretrained`` is given;
    counts above the network's layer total are clipped to it. Ties keep
    visiting order.
    """
    keys = [k for k in grids if k in SEARCH_GRID or k == "frozen_layers"]
    unknown = set(grids) - set(keys)
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("grid is empty")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cells = list(itertools.product(*(grids[k] for k in keys)))
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x6A1D])).permutation(len(cells))
    chosen = [int(i) for i in order[:budget]]

    results = []
    for visit, ci in enumerate(chosen):
        values = dict(zip(keys, cells[ci]))
        epochs = int(values.get("epochs", 1))
        spe = int(values.get("steps_per_epoch", max_steps))
        total = min(epochs * spe, max_steps)
        tc = TrainConfig(learning_rate=float(values.get("learning_rate", 1e-3)), epochs=1,
                         steps_per_epoch=total, dropout_rate=values.get("dropout_rate"),
                         seed=seed)
        if pretrained is not None:
            net = freeze_prefix(pretrained, min(int(values.get("frozen_layers", 0)),
                                                pretrained.layer_count))
        else:
            net = build(net_cfg)
        net, hist = train(net, train_set, tc)
        results.append((visit, ci, values, total, _mean_dice(net, val_set), hist[-1]))
    results.sort(key=lambda r: (-r[4], r[0]))
    return [GridResult(rank, ci, values, total, d, loss)
            for rank, (_, ci, values, total, d, loss) in enumerate(results, start=1)]


def with_precision(cfg: NetConfig, precision: str) -> NetConfig:
    return replace(cfg, precision=precision)
