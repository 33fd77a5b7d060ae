"""Outer search over ensemble weights, driven by victim queries.

The attack walks the weight simplex by coordinate steps: each outer
iteration perturbs one coordinate up and down, re-normalizes, lets the
perturbation machine rebuild delta for both candidates (warm-started from
the incumbent delta), and asks the victim which candidate looks best. Two
reference pathways share the same machinery: a whitebox variant that
replaces queries with a finite-difference weight gradient, and a hard-label
variant that replays a pre-built query set against a label-only oracle.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import pm as pm_mod
from .losses import AttackGoal, LossKind, single_loss
from .oracle import is_success, require_soft
from .prng import stream


@dataclass(frozen=True)
class SearchConfig:
    pm: pm_mod.PMConfig
    max_queries: int = 50
    eta: float | None = None  # None -> 1/(10N)
    order: str = "cyclic"  # or "random"
    order_seed: int = 0
    select_rule: str = "monotone_three_way"  # or "paper_two_way"

    def __post_init__(self):
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.order not in ("cyclic", "random"):
            raise ValueError(f"unknown order {self.order!r}")
        if self.select_rule not in ("monotone_three_way", "paper_two_way"):
            raise ValueError(f"unknown select_rule {self.select_rule!r}")

    def resolved_eta(self, n: int) -> float:
        return self.eta if self.eta is not None else 1.0 / (10.0 * n)


@dataclass
class QueryEvent:
    query_index: int  # 1-based, counts every victim query
    coordinate: int  # simplex coordinate being probed; -1 for init/queryset
    candidate_tag: str  # "init" | "plus" | "minus" | "queryset"
    victim_loss: float  # NaN for hard-label responses
    success_flag: bool


@dataclass
class IterationRecord:
    iteration: int  # 0 is the initial equal-weights state
    coordinate: int
    accepted: str  # which candidate won: "init" | "incumbent" | "plus" | "minus"
    w: np.ndarray
    victim_loss: float
    success: bool
    delta: np.ndarray  # accepted delta (copy)
    warm_start: np.ndarray  # the delta_init every PM call of this iteration used


@dataclass
class AttackOutcome:
    success: bool
    delta: np.ndarray
    q_used: int
    w_final: np.ndarray | None
    events: list = field(default_factory=list)  # QueryEvent per victim query
    trajectory: list = field(default_factory=list)  # IterationRecord per outer iteration
    log: object = None  # the oracle's QueryLog when one was involved


def normalize_weights(v) -> np.ndarray:
    """Clamp negatives to zero and scale to sum 1; all-zero falls back to
    uniform."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("weights must be a nonempty vector")
    v = np.maximum(v, 0.0)
    s = v.sum()
    if s == 0.0:
        return np.full(v.size, 1.0 / v.size)
    return v / s


def coordinate_pair(w, n: int, eta: float):
    """The two renormalized candidates with w_n nudged by +eta / -eta."""
    w = np.asarray(w, dtype=np.float64)
    if not 0 <= n < w.size:
        raise ValueError(f"coordinate {n} out of range for N={w.size}")
    up = w.copy()
    up[n] += eta
    down = w.copy()
    down[n] -= eta
    return normalize_weights(up), normalize_weights(down)


def _coordinate_schedule(order: str, n: int, seed: int):
    """Yields the coordinate for outer iteration 1, 2, ... Cyclic visits
    0..N-1 in turn; random draws a fresh seeded permutation per cycle."""
    k = 0
    perm = None
    while True:
        if order == "cyclic":
            yield k % n
        else:
            if k % n == 0:
                perm = stream(seed, f"order/{k // n}").permutation(n)
            yield int(perm[k % n])
        k += 1


def _victim_loss(resp, goal: AttackGoal, loss: LossKind) -> float:
    if resp.logits is None:
        return float("nan")
    return single_loss(resp.logits, goal, loss)


def bases_attack(x, goal: AttackGoal, oracle, surrogates, cfg: SearchConfig) -> AttackOutcome:
    """Coordinate search on the weight simplex under a hard query budget.

    Query accounting: the equal-weights initial state costs query 1; each
    outer iteration costs two (w-plus then w-minus), except that the minus
    query is skipped when the budget would be exceeded or the plus query
    already succeeded. Stops at first success or at q == max_queries.
    """
    require_soft(oracle)
    x = np.asarray(x, dtype=np.float32)
    n = len(surrogates)
    if n < 1:
        raise ValueError("need at least one surrogate")
    eta = cfg.resolved_eta(n)
    q_max = cfg.max_queries

    events = []
    trajectory = []
    q = 0

    def ask(x_star, coordinate, tag):
        nonlocal q
        resp = oracle.query(x_star, goal)
        q += 1
        loss = _victim_loss(resp, goal, cfg.pm.loss)
        ok = is_success(resp, goal)
        events.append(QueryEvent(q, coordinate, tag, loss, ok))
        return loss, ok

    def outcome(success, delta, w):
        return AttackOutcome(success, delta, q, w, events, trajectory,
                             getattr(oracle, "log", None))

    w = np.full(n, 1.0 / n)
    delta, x_star = pm_mod.pm_run(x, goal, surrogates, w, np.zeros_like(x), cfg.pm)
    loss, ok = ask(x_star, -1, "init")
    trajectory.append(IterationRecord(0, -1, "init", w.copy(), loss, ok,
                                      delta.copy(), np.zeros_like(x)))
    if ok:
        return outcome(True, delta, w)

    schedule = _coordinate_schedule(cfg.order, n, cfg.order_seed)
    iteration = 0
    while q < q_max:
        iteration += 1
        coord = next(schedule)
        w_plus, w_minus = coordinate_pair(w, coord, eta)
        warm = delta.copy()

        d_plus, xs_plus = pm_mod.pm_run(x, goal, surrogates, w_plus, warm, cfg.pm)
        loss_plus, ok = ask(xs_plus, coord, "plus")
        if ok:
            trajectory.append(IterationRecord(iteration, coord, "plus", w_plus.copy(),
                                              loss_plus, True, d_plus.copy(), warm))
            return outcome(True, d_plus, w_plus)

        candidates = [("incumbent", w, delta, loss)] if cfg.select_rule == "monotone_three_way" else []
        candidates.append(("plus", w_plus, d_plus, loss_plus))

        if q < q_max:
            d_minus, xs_minus = pm_mod.pm_run(x, goal, surrogates, w_minus, warm, cfg.pm)
            loss_minus, ok = ask(xs_minus, coord, "minus")
            if ok:
                trajectory.append(IterationRecord(iteration, coord, "minus", w_minus.copy(),
                                                  loss_minus, True, d_minus.copy(), warm))
                return outcome(True, d_minus, w_minus)
            candidates.append(("minus", w_minus, d_minus, loss_minus))

        # min victim loss; ties keep the earliest listed (incumbent, then
        # plus, then minus)
        tag, w, delta, loss = min(candidates, key=lambda c: c[3])
        trajectory.append(IterationRecord(iteration, coord, tag, w.copy(), loss, False,
                                          delta.copy(), warm))
    return outcome(False, delta, w)


def estimate_weight_gradient(x, goal: AttackGoal, victim_model, surrogates, w,
                             delta_init, cfg: SearchConfig, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of the victim loss w.r.t. the weights.

    Each probe evaluates L_v at the PM output for the renormalized candidate
    weight vector, warm-started from the same delta_init (2N PM runs)."""
    n = len(surrogates)
    h = h if h is not None else cfg.resolved_eta(n)
    grad = np.zeros(n)
    for i in range(n):
        w_plus, w_minus = coordinate_pair(w, i, h)
        vals = []
        for cand in (w_plus, w_minus):
            _, x_star = pm_mod.pm_run(x, goal, surrogates, cand, delta_init, cfg.pm)
            vals.append(single_loss(nn.forward(victim_model, x_star), goal, cfg.pm.loss))
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return grad


def whitebox_weight_attack(x, goal: AttackGoal, victim_model, surrogates,
                           cfg: SearchConfig, iterations: int | None = None,
                           fd_step: float | None = None) -> AttackOutcome:
    """Whitebox reference: full weight-gradient steps instead of queries.

    Per iteration the victim-loss gradient w.r.t. w is estimated by central
    differences over all N coordinates, then w moves one eta along the
    normalized gradient direction (sup-norm scaling keeps the move size
    comparable to the blackbox coordinate step). No victim queries are
    counted; iterations defaults to the blackbox outer-iteration count
    (max_queries - 1) // 2 so success-vs-iteration curves line up.
    """
    x = np.asarray(x, dtype=np.float32)
    n = len(surrogates)
    eta = cfg.resolved_eta(n)
    if iterations is None:
        iterations = (cfg.max_queries - 1) // 2

    trajectory = []

    def evaluate(wv, warm, iteration, accepted):
        d, x_star = pm_mod.pm_run(x, goal, surrogates, wv, warm, cfg.pm)
        z = nn.forward(victim_model, x_star)
        loss = single_loss(z, goal, cfg.pm.loss)
        ok = (int(np.argmax(z)) == goal.label) if goal.mode == "targeted" \
            else (int(np.argmax(z)) != goal.label)
        trajectory.append(IterationRecord(iteration, -1, accepted, wv.copy(), loss, ok,
                                          d.copy(), np.asarray(warm, dtype=np.float32).copy()))
        return d, loss, ok

    w = np.full(n, 1.0 / n)
    delta, loss, ok = evaluate(w, np.zeros_like(x), 0, "init")
    if ok:
        return AttackOutcome(True, delta, 0, w, [], trajectory)

    for it in range(1, iterations + 1):
        g = estimate_weight_gradient(x, goal, victim_model, surrogates, w, delta, cfg, fd_step)
        scale = float(np.abs(g).max())
        if scale > 0.0:
            w = normalize_weights(w - eta * (g / scale))
        delta, loss, ok = evaluate(w, delta, it, "step")
        if ok:
            return AttackOutcome(True, delta, 0, w, [], trajectory)
    return AttackOutcome(False, delta, 0, w, [], trajectory)


def hardlabel_queryset(x, goal: AttackGoal, surrogate_victim, surrogates,
                       cfg: SearchConfig, q_total: int | None = None) -> list:
    """The score-based loop run against a whitebox stand-in victim, without
    termination, recording delta at every stand-in evaluation. The first
    entry is the equal-weights PM output; the list has exactly q_total
    entries (default cfg.max_queries)."""
    x = np.asarray(x, dtype=np.float32)
    n = len(surrogates)
    eta = cfg.resolved_eta(n)
    q_total = q_total if q_total is not None else cfg.max_queries

    def stand_in_loss(x_star):
        return single_loss(nn.forward(surrogate_victim, x_star), goal, cfg.pm.loss)

    deltas = []
    w = np.full(n, 1.0 / n)
    delta, x_star = pm_mod.pm_run(x, goal, surrogates, w, np.zeros_like(x), cfg.pm)
    loss = stand_in_loss(x_star)
    deltas.append(delta.copy())

    schedule = _coordinate_schedule(cfg.order, n, cfg.order_seed)
    while len(deltas) < q_total:
        coord = next(schedule)
        w_plus, w_minus = coordinate_pair(w, coord, eta)
        warm = delta.copy()

        d_plus, xs_plus = pm_mod.pm_run(x, goal, surrogates, w_plus, warm, cfg.pm)
        loss_plus = stand_in_loss(xs_plus)
        deltas.append(d_plus.copy())
        candidates = [("incumbent", w, delta, loss)] if cfg.select_rule == "monotone_three_way" else []
        candidates.append(("plus", w_plus, d_plus, loss_plus))

        if len(deltas) < q_total:
            d_minus, xs_minus = pm_mod.pm_run(x, goal, surrogates, w_minus, warm, cfg.pm)
            loss_minus = stand_in_loss(xs_minus)
            deltas.append(d_minus.copy())
            candidates.append(("minus", w_minus, d_minus, loss_minus))

        _, w, delta, loss = min(candidates, key=lambda c: c[3])
    return deltas


def hardlabel_attack(x, goal: AttackGoal, queryset, hard_oracle) -> AttackOutcome:
    """Sequential replay of a stored query set against a label-only oracle:
    stops at the first success, else exhausts the set."""
    x = np.asarray(x, dtype=np.float32)
    events = []
    for k, delta in enumerate(queryset, start=1):
        resp = hard_oracle.query(x + delta, goal)
        ok = is_success(resp, goal)
        events.append(QueryEvent(k, -1, "queryset", _victim_loss(resp, goal, LossKind()), ok))
        if ok:
            return AttackOutcome(True, delta, k, None, events, [],
                                 getattr(hard_oracle, "log", None))
    last = queryset[-1] if queryset else np.zeros_like(x)
    return AttackOutcome(False, last, len(queryset), None, events, [],
                         getattr(hard_oracle, "log", None))


def export_query_log_csv(outcome: AttackOutcome, path) -> None:
    """One row per victim query: query_index, coordinate, candidate_tag,
    victim_loss, success_flag (success as 1/0)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "coordinate", "candidate_tag",
                         "victim_loss", "success_flag"])
        for ev in outcome.events:
            writer.writerow([ev.query_index, ev.coordinate, ev.candidate_tag,
                             repr(ev.victim_loss), int(ev.success_flag)])
