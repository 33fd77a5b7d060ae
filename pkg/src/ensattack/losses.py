"""Adversarial losses for single models and weighted surrogate ensembles.

Sign convention: lower is always more adversarial, for every loss kind and
goal mode, so the outer search can select candidates by plain min. Success
itself is decided by the argmax predicate (see oracle.is_success), never by
the sign of a loss.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DegenerateClassifierError, EnsembleArityError

FUSION_KINDS = ("weighted_probabilities", "weighted_logits", "weighted_loss")
# floor for fused probabilities before log; keeps the loss finite when every
# ensemble member assigns (float32) zero mass to the class of interest
_P_FLOOR = 1e-12


@dataclass(frozen=True)
class AttackGoal:
    mode: str  # "targeted" (label = y*) or "untargeted" (label = true y)
    label: int

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise ValueError(f"unknown goal mode {self.mode!r}")
        if self.label < 0:
            raise ValueError("label must be a class index")


@dataclass(frozen=True)
class LossKind:
    kind: str = "cw_margin"  # or "cross_entropy"
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cw_margin", "cross_entropy"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError("kappa must be finite and >= 0")


def _check_logits(z: np.ndarray, label: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    if z.ndim != 1 or z.size < 2:
        raise DegenerateClassifierError(f"need a logit vector with C >= 2, got shape {z.shape}")
    if label >= z.size:
        raise DegenerateClassifierError(f"label {label} out of range for C={z.size}")
    return z


def cw_margin_loss(z: np.ndarray, goal: AttackGoal, kappa: float = 0.0) -> float:
    """Margin loss; <= 0 iff the goal's argmax condition holds weakly.

    targeted:   max(max_{j != y*} z_j - z_{y*}, -kappa)
    untargeted: max(z_y - max_{j != y} z_j, -kappa)
    """
    z = _check_logits(z, goal.label)
    others = np.delete(z, goal.label)
    if goal.mode == "targeted":
        margin = float(others.max() - z[goal.label])
    else:
        margin = float(z[goal.label] - others.max())
    return max(margin, -float(kappa))


def cw_margin_grad(z: np.ndarray, goal: AttackGoal, kappa: float = 0.0) -> np.ndarray:
    """dL/dz for cw_margin_loss; zero on the clipped (-kappa) branch and at
    the clip boundary. Runner-up argmax ties break toward the lowest index."""
    z = _check_logits(z, goal.label)
    g = np.zeros_like(z)
    masked = z.copy()
    masked[goal.label] = -np.inf
    j = int(np.argmax(masked))
    if goal.mode == "targeted":
        margin = float(z[j] - z[goal.label])
        sign = np.float32(1.0)
    else:
        margin = float(z[goal.label] - z[j])
        sign = np.float32(-1.0)
    if margin > -float(kappa):
        g[j] = sign
        g[goal.label] = -sign
    return g


def cross_entropy_loss(z: np.ndarray, goal: AttackGoal) -> float:
    """Stable log-sum-exp form. targeted: -log softmax(z)_{y*};
    untargeted: +log softmax(z)_y, so lower is more adversarial either way."""
    z = _check_logits(z, goal.label)
    m = float(z.max())
    lse = m + float(np.log(np.sum(np.exp(z.astype(np.float64) - m))))
    nll = lse - float(z[goal.label])
    return nll if goal.mode == "targeted" else -nll


def cross_entropy_grad(z: np.ndarray, goal: AttackGoal) -> np.ndarray:
    z = _check_logits(z, goal.label)
    p = nn.softmax(z)
    g = p.copy()
    g[goal.label] -= np.float32(1.0)
    return g if goal.mode == "targeted" else -g


def single_loss(z: np.ndarray, goal: AttackGoal, loss: LossKind) -> float:
    if loss.kind == "cw_margin":
        return cw_margin_loss(z, goal, loss.kappa)
    return cross_entropy_loss(z, goal)


def single_loss_grad(z: np.ndarray, goal: AttackGoal, loss: LossKind) -> np.ndarray:
    if loss.kind == "cw_margin":
        return cw_margin_grad(z, goal, loss.kappa)
    return cross_entropy_grad(z, goal)


def _check_arity(n_outputs: int, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or len(w) != n_outputs:
        raise EnsembleArityError(f"{n_outputs} outputs vs {w.shape} weights")
    return w


def ensemble_loss(outputs, w, fusion: str, loss: LossKind, goal: AttackGoal) -> float:
    """Three fusion schemes over per-model logits.

    weighted_probabilities fuses softmax outputs and always applies the
    log-probability form regardless of the configured LossKind; the other
    two apply the configured loss to fused logits / per-model logits.
    """
    w = _check_arity(len(outputs), w)
    if fusion == "weighted_loss":
        return float(sum(wi * single_loss(z, goal, loss) for wi, z in zip(w, outputs)))
    if fusion == "weighted_logits":
        fused = np.zeros_like(np.asarray(outputs[0], dtype=np.float32))
        for wi, z in zip(w, outputs):
            fused = fused + np.float32(wi) * np.asarray(z, dtype=np.float32)
        return single_loss(fused, goal, loss)
    if fusion == "weighted_probabilities":
        p_bar = np.zeros(len(outputs[0]), dtype=np.float64)
        for wi, z in zip(w, outputs):
            p_bar += wi * nn.softmax(np.asarray(z, dtype=np.float32)).astype(np.float64)
        p = max(float(p_bar[goal.label]), _P_FLOOR)
        return float(-np.log(p)) if goal.mode == "targeted" else float(np.log(p))
    raise ValueError(f"unknown fusion {fusion!r}")


def ensemble_input_gradient(models, x, delta, w, fusion: str, loss: LossKind,
                            goal: AttackGoal) -> np.ndarray:
    """Exact reverse-mode gradient of ensemble_loss w.r.t. delta.

    The reduction runs over models in list order (callers pass manifest-id
    order), so the result is deterministic. Zero-weight members are skipped:
    they contribute exactly nothing, which keeps simplex vertices identical
    to the single-model gradient.
    """
    w = _check_arity(len(models), w)
    x_adv = np.asarray(x, dtype=np.float32) + np.asarray(delta, dtype=np.float32)
    if fusion not in FUSION_KINDS:
        raise ValueError(f"unknown fusion {fusion!r}")

    saved = []  # (index, weight, activations) for active members
    for i, model in enumerate(models):
        if fusion != "weighted_logits" and w[i] == 0.0:
            continue
        saved.append((i, w[i], nn._forward_saved(model, x_adv)))

    if fusion == "weighted_logits":
        fused = np.zeros_like(saved[0][2][-1])
        for _, wi, acts in saved:
            fused = fused + np.float32(wi) * acts[-1]
        u = single_loss_grad(fused, goal, loss)
        upstreams = [np.float32(wi) * u for _, wi, _ in saved]
    elif fusion == "weighted_loss":
        upstreams = [np.float32(wi) * single_loss_grad(acts[-1], goal, loss)
                     for _, wi, acts in saved]
    else:  # weighted_probabilities
        probs = [nn.softmax(acts[-1]) for _, _, acts in saved]
        p_bar = np.zeros(len(probs[0]), dtype=np.float64)
        for (_, wi, _), p in zip(saved, probs):
            p_bar += wi * p.astype(np.float64)
        # dL/dp_bar is a one-hot spike at the goal label
        v = np.zeros(len(p_bar), dtype=np.float32)
        spike = 1.0 / max(float(p_bar[goal.label]), _P_FLOOR)
        v[goal.label] = np.float32(-spike if goal.mode == "targeted" else spike)
        # chain through each member's softmax: J^T v = p (v - <v, p>)
        upstreams = [np.float32(wi) * (p * (v - np.float32(np.dot(v, p))))
                     for (_, wi, _), p in zip(saved, probs)]

    grad = None
    for (i, _, acts), u in zip(saved, upstreams):
        dx, _ = nn.backward(models[i], acts, u)
        grad = dx if grad is None else grad + dx
    if grad is None:  # every weight zero (normalize_weights forbids this)
        grad = np.zeros_like(x_adv)
    return grad
