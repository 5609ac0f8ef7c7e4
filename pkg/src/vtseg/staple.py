"""Binary STAPLE: expectation-maximization fusion of several raters'
segmentations into a voxel-wise probability of the true label, with
per-rater sensitivity and specificity estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import LabelMap, RaterStack, VolumeMeta

CLAMP_LO = 1e-6
CLAMP_HI = 1.0 - 1e-6


def _clamp(x: float) -> float:
    return float(min(max(x, CLAMP_LO), CLAMP_HI))


@dataclass(frozen=True)
class RaterPerformance:
    sensitivity: float
    specificity: float

    def __post_init__(self):
        object.__setattr__(self, "sensitivity", _clamp(self.sensitivity))
        object.__setattr__(self, "specificity", _clamp(self.specificity))


@dataclass(frozen=True)
class StapleResult:
    meta: VolumeMeta
    weights: np.ndarray = field(repr=False)  # (nx, ny, nz) foreground probability
    performances: tuple[RaterPerformance, ...]
    prior: float
    iterations: int
    converged: bool
    trace: tuple[float, ...]
    # (W, p, q) after each iteration; only filled when record_iterates=True
    iterates: tuple = field(default=(), repr=False)


def _sequential_sum(rows: np.ndarray) -> np.ndarray:
    total = rows[0].copy()
    for r in rows[1:]:
        total += r
    return total


def _e_step(decisions, log_p, log_1mp, log_q, log_1mq, log_prior, log_1mprior):
    """Posterior foreground probability of every voxel.

    Per-rater log terms are sorted by value at each voxel before being
    summed, so the result does not depend on the order of the raters.
    """
    d = decisions.astype(bool)
    terms_a = np.where(d, log_p[:, None], log_1mp[:, None])
    terms_b = np.where(d, log_1mq[:, None], log_q[:, None])
    la = log_prior + _sequential_sum(np.sort(terms_a, axis=0))
    lb = log_1mprior + _sequential_sum(np.sort(terms_b, axis=0))
    # W = a / (a + b) = 1 / (1 + exp(lb - la)), evaluated without overflow
    diff = lb - la
    w = np.empty_like(diff)
    pos = diff > 0
    e = np.exp(-diff[pos])
    w[pos] = e / (1.0 + e)
    w[~pos] = 1.0 / (1.0 + np.exp(diff[~pos]))
    return w


def _m_step(decisions, w):
    # one reduction per rater, so a rater's estimate is independent of its position
    v = 1.0 - w
    sw, sv = w.sum(), v.sum()
    p = np.empty(len(decisions))
    q = np.empty(len(decisions))
    for j, row in enumerate(decisions.astype(bool)):
        p[j] = w[row].sum() / sw if sw > 0 else CLAMP_HI
        q[j] = v[~row].sum() / sv if sv > 0 else CLAMP_HI
    return np.clip(p, CLAMP_LO, CLAMP_HI), np.clip(q, CLAMP_LO, CLAMP_HI)


def staple_em(stack: RaterStack, init: RaterPerformance = RaterPerformance(0.9, 0.9),
              prior: float | str = "auto", tol: float = 1e-7, max_iter: int = 100,
              record_iterates: bool = False) -> StapleResult:
    """Run STAPLE on ``stack``.

    ``prior="auto"`` uses the mean foreground fraction over raters.
    Iteration stops when the mean absolute change of the weights drops
    below ``tol``. If every rater agrees at every voxel, the unanimous map
    is returned immediately with both rates at the upper clamp.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    decisions = stack.decisions()
    k, n = decisions.shape
    if prior == "auto":
        gamma = float(decisions.mean())
    else:
        gamma = float(prior)
        if not 0 <= gamma <= 1:
            raise ValueError("prior must be in [0, 1]")

    if np.all(decisions == decisions[0]):
        w = decisions[0].astype(np.float64)
        perf = tuple(RaterPerformance(CLAMP_HI, CLAMP_HI) for _ in range(k))
        return StapleResult(stack.meta, w.reshape(stack.meta.dims), perf, gamma, 0, True, ())

    gamma_c = _clamp(gamma)
    log_prior, log_1mprior = np.log(gamma_c), np.log1p(-gamma_c)
    p = np.full(k, _clamp(init.sensitivity))
    q = np.full(k, _clamp(init.specificity))
    w_prev = None
    trace = []
    iterates = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = _e_step(decisions, np.log(p), np.log1p(-p), np.log(q), np.log1p(-q),
                    log_prior, log_1mprior)
        p, q = _m_step(decisions, w)
        if record_iterates:
            iterates.append((w.copy(), p.copy(), q.copy()))
        if w_prev is not None:
            delta = float(np.mean(np.abs(w - w_prev)))
            trace.append(delta)
            if delta < tol:
                converged = True
                break
        w_prev = w

    perf = tuple(RaterPerformance(float(a), float(b)) for a, b in zip(p, q))
    return StapleResult(stack.meta, w.reshape(stack.meta.dims), perf, gamma, it, converged,
                        tuple(trace), tuple(iterates))


def consensus(result: StapleResult, threshold: float = 0.5) -> LabelMap:
    """Foreground where the STAPLE weight is at least ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    return LabelMap(result.meta, (result.weights >= threshold).astype(np.uint8))


def majority_vote(stack: RaterStack) -> LabelMap:
    """Foreground where more than half of the raters say so."""
    d = stack.decisions()
    votes = d.sum(axis=0, dtype=np.int64)
    return LabelMap(stack.meta, (2 * votes > len(d)).astype(np.uint8).reshape(stack.meta.dims))


def simulate_raters(truth: LabelMap, perfs, seed, volume_id: str = "simulated") -> RaterStack:
    """Independent noisy copies of ``truth``.

    ``perfs`` holds RaterPerformance objects or raw ``(p, q)`` pairs. Rater
    ``j`` keeps each true-foreground voxel with probability ``p`` and each
    true-background voxel with probability ``q``. Raters draw from
    independent child streams of ``seed``. A stack needs at least two
    raters, so a single performance is rejected by RaterStack.
    """
    perfs = list(perfs)
    if not perfs:
        raise ValueError("need at least one rater performance")
    t = truth.mask
    children = np.random.SeedSequence(seed).spawn(len(perfs))
    raters = []
    for perf, child in zip(perfs, children):
        # raw pairs are not clamped, so (1, 1) reproduces the truth exactly
        if isinstance(perf, RaterPerformance):
            p, q = perf.sensitivity, perf.specificity
        else:
            p, q = perf
        u = np.random.default_rng(child).random(t.shape)
        marked = np.where(t, u < p, u >= q)
        raters.append(LabelMap(truth.meta, marked.astype(np.uint8)))
    return RaterStack(volume_id, tuple(raters))
