"""Robustness measurements against hard-label models.

All attacks see the target only through :class:`HardLabelOracle` and keep
every iterate inside [0, 1]^d. An input counts as adversarial when the
oracle's label differs from the true label.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import ConfigError, Dataset, NoiseConfig, gaussian_augment
from .grad import SgdConfig, mlp_input_gradient, train_mlp
from .models import MlpParams


class QueryBudgetExceeded(RuntimeError):
    """Raised when an oracle's query budget runs out; `partial` holds state so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class HardLabelOracle:
    """Wraps a batch predictor and counts one query per input point."""

    def __init__(self, predict: Callable, max_queries: int | None = None):
        self._predict = predict
        self.max_queries = max_queries
        self.queries = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        X = x[None, :] if x.ndim == 1 else x
        if self.max_queries is not None and self.queries + X.shape[0] > self.max_queries:
            raise QueryBudgetExceeded(f"query budget of {self.max_queries} exhausted")
        self.queries += X.shape[0]
        out = np.asarray(self._predict(X)).reshape(-1)
        return int(out[0]) if x.ndim == 1 else out

    def fresh(self) -> "HardLabelOracle":
        return HardLabelOracle(self._predict, self.max_queries)


def as_oracle(model_or_fn) -> HardLabelOracle:
    if isinstance(model_or_fn, HardLabelOracle):
        return model_or_fn.fresh()
    fn = model_or_fn.predict if hasattr(model_or_fn, "predict") else model_or_fn
    return HardLabelOracle(fn)


@dataclass
class AttackConfig:
    max_iter: int = 100
    restarts: int = 10
    init_draws: int = 1000
    # boundary attack
    spherical_step: float = 0.01
    source_step: float = 0.01
    step_adapt: float = 1.2
    trials: int = 25
    # hopskipjump
    init_evals: int = 100
    max_evals: int = 10_000
    gamma: float = 1.0
    theta: float | None = None
    norm: str = "l2"

    def __post_init__(self):
        if self.max_iter < 0 or self.restarts < 1 or self.init_draws < 1 or self.trials < 1:
            raise ConfigError("attack counts must be positive")
        if self.norm not in ("l2", "linf"):
            raise ConfigError(f"norm must be 'l2' or 'linf', got {self.norm!r}")
        if min(self.spherical_step, self.source_step, self.step_adapt - 1, self.gamma) <= 0:
            raise ConfigError("attack step sizes must be positive")


@dataclass
class AttackResult:
    adversarial: np.ndarray
    l2: float
    linf: float
    success: bool
    queries: int
    restarts_used: int = 1
    trace: list = field(default_factory=list)
    note: str = ""

    def distance(self, norm: str) -> float:
        return self.l2 if norm == "l2" else self.linf


def _result(x0, x_adv, success, oracle, trace, note=""):
    diff = x_adv - x0
    return AttackResult(
        adversarial=x_adv,
        l2=float(np.linalg.norm(diff)),
        linf=float(np.max(np.abs(diff))) if diff.size else 0.0,
        success=success,
        queries=oracle.queries,
        trace=trace,
        note=note,
    )


def _failure(x0, oracle, note):
    r = _result(x0, x0.copy(), False, oracle, [], note)
    r.l2 = r.linf = math.inf
    return r


def _initial_adversarial(oracle, x0, y, cfg: AttackConfig, rng, chunk: int = 20):
    """Uniform-noise images rejection-sampled until one is misclassified."""
    drawn = 0
    while drawn < cfg.init_draws:
        m = min(chunk, cfg.init_draws - drawn)
        cand = rng.uniform(0.0, 1.0, size=(m, x0.size))
        hits = np.flatnonzero(oracle(cand) != y)
        drawn += m
        if hits.size:
            return cand[hits[0]]
    return None


def _blend_search(oracle, x0, x_adv, y, tol):
    """Bisect the segment x0 -> x_adv; returns the adversarial end of the final bracket."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if oracle((1.0 - mid) * x0 + mid * x_adv) != y:
            hi = mid
        else:
            lo = mid
    return (1.0 - hi) * x0 + hi * x_adv


# ---------------------------------------------------------------------------
# boundary attack


def boundary_attack(oracle, x_clean, y_true, cfg: AttackConfig, rng) -> AttackResult:
    """Decision-based random walk along the boundary towards the clean input.

    Each iteration draws `cfg.trials` orthogonal (spherical) candidates at
    relative size `spherical_step`, contracts the adversarial ones towards the
    clean point by `source_step`, and keeps the closest adversarial result.
    Both step sizes are multiplied/divided by `step_adapt` depending on
    whether more or fewer than half of their trials stayed adversarial.
    """
    rng = np.random.default_rng(rng)
    x0 = np.asarray(x_clean, dtype=np.float64)
    if oracle(x0) != y_true:
        return _result(x0, x0.copy(), True, oracle, [0.0], "clean input already misclassified")
    try:
        start = _initial_adversarial(oracle, x0, y_true, cfg, rng)
        if start is None:
            return _failure(x0, oracle, "no adversarial starting point found")
        x_adv = _blend_search(oracle, x0, start, y_true, 1e-3)
    except QueryBudgetExceeded:
        return _failure(x0, oracle, "query budget exhausted before a starting point was found")
    dist = float(np.linalg.norm(x_adv - x0))
    trace = [dist]
    note = ""
    try:
        delta, eps = cfg.spherical_step, cfg.source_step
        for _ in range(cfg.max_iter):
            if dist == 0.0:
                break
            eta = rng.standard_normal((cfg.trials, x0.size))
            eta *= (delta * dist) / np.linalg.norm(eta, axis=1, keepdims=True)
            cand = x_adv + eta - x0
            cand = x0 + cand * (dist / np.linalg.norm(cand, axis=1, keepdims=True))
            cand = np.clip(cand, 0.0, 1.0)
            ok = oracle(cand) != y_true
            rate = ok.mean()
            delta = delta * cfg.step_adapt if rate > 0.5 else delta / cfg.step_adapt
            if not ok.any():
                trace.append(dist)
                continue
            sph = cand[ok]
            moved = sph + eps * (x0 - sph)
            ok2 = oracle(moved) != y_true
            rate2 = ok2.mean()
            eps = eps * cfg.step_adapt if rate2 > 0.5 else eps / cfg.step_adapt
            eps = min(eps, 1.0)
            if ok2.any():
                good = moved[ok2]
                d = np.linalg.norm(good - x0, axis=1)
                i = int(np.argmin(d))
                if d[i] < dist:
                    x_adv, dist = good[i], float(d[i])
            trace.append(dist)
    except QueryBudgetExceeded:
        note = "query budget exhausted; best-so-far returned"
    return _result(x0, x_adv, True, oracle, trace, note)


# ---------------------------------------------------------------------------
# hopskipjump


def _distance(a, b, norm):
    diff = a - b
    return float(np.linalg.norm(diff)) if norm == "l2" else float(np.max(np.abs(diff)))


def hsj_theta(d: int, cfg: AttackConfig) -> float:
    """Bisection tolerance; clamped so one projection costs between 10 and 20 queries."""
    if cfg.theta is not None:
        return cfg.theta
    raw = cfg.gamma / (d * math.sqrt(d)) if cfg.norm == "l2" else cfg.gamma / (d * d)
    return float(np.clip(raw, 2.0**-20, 2.0**-10))


def hsj_project(oracle, x0, x_adv, y, theta, norm):
    """Move an adversarial point onto the boundary along the L2 segment or the
    L-inf box shrinking towards x0. Returns the adversarial side of the bracket."""
    if norm == "l2":
        hi, tol = 1.0, theta
        project = lambda a: (1.0 - a) * x0 + a * x_adv  # noqa: E731
    else:
        hi = _distance(x_adv, x0, "linf")
        tol = min(hi * theta, theta)
        project = lambda a: np.clip(x_adv, x0 - a, x0 + a)  # noqa: E731
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if oracle(project(mid)) != y:
            hi = mid
        else:
            lo = mid
    return project(hi)


def hsj_gradient(oracle, x_b, y, n_evals, delta, norm, rng):
    """Monte-Carlo estimate of the boundary normal (pointing to the adversarial side)."""
    shape = (n_evals, x_b.size)
    rv = rng.standard_normal(shape) if norm == "l2" else rng.uniform(-1.0, 1.0, shape)
    rv /= np.linalg.norm(rv, axis=1, keepdims=True)
    pert = np.clip(x_b + delta * rv, 0.0, 1.0)
    rv = (pert - x_b) / delta
    fval = np.where(oracle(pert) != y, 1.0, -1.0)
    m = fval.mean()
    if m == 1.0:
        g = rv.mean(axis=0)
    elif m == -1.0:
        g = -rv.mean(axis=0)
    else:
        g = ((fval - m)[:, None] * rv).mean(axis=0)
    nrm = np.linalg.norm(g)
    return g / nrm if nrm > 0 else g


def hopskipjump(oracle, x_clean, y_true, cfg: AttackConfig, rng) -> AttackResult:
    """Boundary projection, gradient-direction estimate, geometric step search; repeat.

    Iteration t uses min(init_evals * sqrt(t), max_evals) probe queries. The
    result is the closest boundary point seen (best-so-far).
    """
    rng = np.random.default_rng(rng)
    norm = cfg.norm
    x0 = np.asarray(x_clean, dtype=np.float64)
    d = x0.size
    if oracle(x0) != y_true:
        return _result(x0, x0.copy(), True, oracle, [0.0], "clean input already misclassified")
    theta = hsj_theta(d, cfg)
    try:
        start = _initial_adversarial(oracle, x0, y_true, cfg, rng)
        if start is None:
            return _failure(x0, oracle, "no adversarial starting point found")
        x_b = hsj_project(oracle, x0, _blend_search(oracle, x0, start, y_true, theta), y_true, theta, norm)
    except QueryBudgetExceeded:
        return _failure(x0, oracle, "query budget exhausted before a starting point was found")
    dist = _distance(x_b, x0, norm)
    best, best_dist = x_b, dist
    trace = [best_dist]
    note = ""
    try:
        for t in range(1, cfg.max_iter + 1):
            if dist == 0.0:
                break
            if t == 1:
                delta = 0.1
            else:
                delta = (math.sqrt(d) if norm == "l2" else d) * theta * dist
            n_evals = int(min(cfg.init_evals * math.sqrt(t), cfg.max_evals))
            g = hsj_gradient(oracle, x_b, y_true, n_evals, delta, norm, rng)
            update = g if norm == "l2" else np.sign(g)
            step = dist / math.sqrt(t)
            x_new = x_b
            for _ in range(60):
                cand = np.clip(x_b + step * update, 0.0, 1.0)
                if oracle(cand) != y_true:
                    x_new = cand
                    break
                step /= 2.0
            x_b = hsj_project(oracle, x0, x_new, y_true, theta, norm)
            dist = _distance(x_b, x0, norm)
            if dist < best_dist:
                best, best_dist = x_b, dist
            trace.append(best_dist)
    except QueryBudgetExceeded:
        note = "query budget exhausted; best-so-far returned"
    return _result(x0, best, True, oracle, trace, note)


ATTACKS = {"boundary": boundary_attack, "hopskipjump": hopskipjump}


@dataclass
class MinDistortion:
    best: AttackResult
    l2_min: float
    linf_min: float
    runs: list

    @property
    def success(self) -> bool:
        return self.best.success


def min_distortion(oracle, x_clean, y_true, kind: str, cfg: AttackConfig, seed: int = 0) -> MinDistortion:
    """Run `cfg.restarts` independent attacks and keep the minima over successful runs.

    Every restart gets its own query counter and a child seed of `seed`.
    """
    if kind not in ATTACKS:
        raise ConfigError(f"unknown attack {kind!r}")
    attack = ATTACKS[kind]
    children = np.random.SeedSequence(seed).spawn(cfg.restarts)
    runs = [attack(as_oracle(oracle), x_clean, y_true, cfg, np.random.default_rng(s)) for s in children]
    ok = [r for r in runs if r.success]
    if not ok:
        best = runs[0]
        best.restarts_used = len(runs)
        return MinDistortion(best, math.inf, math.inf, runs)
    norm = "l2" if kind == "boundary" else cfg.norm
    best = min(ok, key=lambda r: r.distance(norm))
    best = replace(best, restarts_used=len(runs), queries=sum(r.queries for r in runs))
    return MinDistortion(best, min(r.l2 for r in ok), min(r.linf for r in ok), runs)


# ---------------------------------------------------------------------------
# gaussian noise


def noise_accuracy_sweep(model, data: Dataset, sigmas: Sequence[float], seed: int = 0):
    """[(sigma, accuracy)] of `model` on noisy, clipped copies of `data`."""
    predict = model.predict if hasattr(model, "predict") else model
    out = []
    for s in sigmas:
        if s < 0:
            raise ConfigError(f"negative sigma {s}")
        noisy = gaussian_augment(data, NoiseConfig(float(s), seed))
        out.append((float(s), float(np.mean(predict(noisy.features) == noisy.labels))))
    return out


# ---------------------------------------------------------------------------
# substitute model black-box attack


@dataclass(frozen=True)
class SubstituteConfig:
    seed_count: int = 200
    epochs: int = 20
    hidden: tuple = (200, 200)
    step: float = 0.1
    cap: int = 6400
    train_passes: int = 10
    batch_size: int = 50
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_queries: int | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.seed_count, self.epochs, self.cap, self.train_passes, self.batch_size) < 1:
            raise ConfigError("substitute counts must be positive")
        if self.step < 0:
            raise ConfigError("augmentation step must be >= 0")


@dataclass
class SubstituteResult:
    params: MlpParams
    points: np.ndarray
    labels: np.ndarray
    queries: int
    agreement: list = field(default_factory=list)


def jacobian_augment(sub: MlpParams, X, labels, step, rng, limit=None) -> np.ndarray:
    """New points x + step * sign(d P(label | x) / dx), clipped to [0, 1].

    For a single logistic output the sign of that gradient is
    label * sign(d logit / dx). `limit` augments a random subset only.
    """
    if limit is not None and limit < X.shape[0]:
        pick = np.sort(rng.choice(X.shape[0], size=limit, replace=False))
        X, labels = X[pick], labels[pick]
    g = mlp_input_gradient(sub, X)
    return np.clip(X + step * labels[:, None] * np.sign(g), 0.0, 1.0)


def train_substitute(target, seed_points, cfg: SubstituteConfig, holdout=None) -> SubstituteResult:
    """Label the collection with the target, fit the substitute, augment, repeat.

    The substitute keeps training from its previous weights each round.
    Only newly created points are sent to the target. `holdout` (features)
    enables per-round agreement tracking.
    """
    oracle = HardLabelOracle(target.predict if hasattr(target, "predict") else target, cfg.max_queries)
    rng = np.random.default_rng(cfg.seed)
    S = np.asarray(seed_points, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ConfigError("substitute seed set must be a non-empty matrix")
    labels = np.empty(0, dtype=np.int8)
    sub = None
    agreement = []
    hold_labels = None
    sgd = SgdConfig(
        hidden=cfg.hidden,
        batch_size=cfg.batch_size,
        momentum=cfg.momentum,
        learning_rate=cfg.learning_rate,
        epochs=cfg.train_passes,
    )
    for epoch in range(cfg.epochs):
        try:
            new = oracle(S[labels.shape[0] :]).astype(np.int8)
        except QueryBudgetExceeded as exc:
            exc.partial = SubstituteResult(sub, S[: labels.shape[0]], labels, oracle.queries, agreement)
            raise
        labels = np.concatenate([labels, new])
        if not (np.any(labels == 1) and np.any(labels == -1)):
            raise ConfigError("target assigns one label to every substitute point")
        sub = train_mlp(Dataset(S, labels), replace(sgd, seed=cfg.seed + epoch), init=sub)
        if holdout is not None:
            if hold_labels is None:
                hold_labels = np.asarray(target.predict(holdout) if hasattr(target, "predict") else target(holdout))
            agreement.append(float(np.mean(sub.predict(holdout) == hold_labels)))
        room = cfg.cap - S.shape[0]
        if epoch < cfg.epochs - 1 and room > 0:
            aug = jacobian_augment(sub, S, labels.astype(np.float64), cfg.step, rng, limit=min(room, S.shape[0]))
            S = np.concatenate([S, aug])
    return SubstituteResult(sub, S, labels, oracle.queries, agreement)


def fgsm(substitute: MlpParams, x, epsilon: float, y=None):
    """x + epsilon * sign(grad_x cross-entropy), clipped to [0, 1].

    `y` defaults to the substitute's own prediction.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    if y is None:
        y = substitute.predict(X)
    g = mlp_input_gradient(substitute, X, np.asarray(y, dtype=np.float64))
    adv = np.clip(X + epsilon * np.sign(g), 0.0, 1.0)
    return adv[0] if x.ndim == 1 else adv


def correctly_classified(model, data: Dataset) -> Dataset:
    predict = model.predict if hasattr(model, "predict") else model
    return data.subset(np.flatnonzero(predict(data.features) == data.labels))


def blackbox_eval(target, substitute: MlpParams, test: Dataset, epsilons: Sequence[float]):
    """[(epsilon, accuracy)] of the target on FGSM examples crafted on the substitute.

    Only test points the target classifies correctly are attacked, so
    accuracy = 1 - attack success rate and epsilon = 0 gives 1.0.
    """
    predict = target.predict if hasattr(target, "predict") else target
    subset = correctly_classified(predict, test)
    if subset.n == 0:
        raise ConfigError("target classifies no test point correctly")
    out = []
    for eps in epsilons:
        adv = fgsm(substitute, subset.features, float(eps), subset.labels)
        out.append((float(eps), float(np.mean(predict(adv) == subset.labels))))
    return out


def write_attack_records(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_attack_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
