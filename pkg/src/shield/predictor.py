"""Dual-class predictors: fixed baselines and a per-bit logistic classifier.

A feature vector holds relative displacements (obstacle minus ego) laid out
agent-major, then mode, then step, then (x, y). A model maps it to a
:class:`~shield.screening.DualClass` of the sizes it was trained for.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .dual import DualObjective, DualPoint, DualSolveError, solve_dual_exact
from .screening import DualClass

log = logging.getLogger(__name__)

KINDS = ("all_active", "distance_heuristic", "logistic")
MU_TOL = 1e-6
G_TOL = 1e-6


@dataclass
class TrainingSample:
    feature: np.ndarray
    mu_label: np.ndarray
    g_label: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=float).reshape(-1)
        self.mu_label = np.asarray(self.mu_label, dtype=int).reshape(-1)
        self.g_label = np.asarray(self.g_label, dtype=int).reshape(-1)
        if not np.all(np.isfinite(self.feature)):
            raise ValueError("feature vector has non-finite entries")

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.mu_label, self.g_label])


def labels_from_dual(y: DualPoint, lam, mu_tol=MU_TOL, g_tol=G_TOL):
    """(mu_label, g_label) with mu_i > mu_tol and |g_j| >= lam - g_tol."""
    return (y.mu > mu_tol).astype(int), (np.abs(y.g) >= lam - g_tol).astype(int)


@dataclass
class PredictorModel:
    """Immutable predictor record.

    ``groups`` is the number of agent-mode blocks (V*M); the distance
    heuristic needs it to map per-block distances to row and gain classes.
    ``weights`` has one row per output bit (mu bits first, then g bits).
    """

    kind: str
    n_features: int
    n_mu: int
    n_g: int
    zeta: Optional[float] = None
    tau: float = 0.5
    seed: int = 0
    groups: int = 0
    distance: float = 10.0
    pair_norms: bool = True
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("decision threshold must lie in (0, 1)")
        if self.kind == "distance_heuristic":
            if self.groups <= 0 or self.n_features % (2 * self.groups) or self.n_mu % self.groups \
                    or self.n_g % self.groups:
                raise ValueError("distance heuristic needs sizes divisible by the number of groups")

    def predict(self, z, zeta=None) -> DualClass:
        return predict(self, z, zeta=zeta)

    def probabilities(self, z) -> np.ndarray:
        Z = self._check(z)
        if self.kind != "logistic":
            cls = self.predict(Z)
            return np.concatenate([cls.mu_class, cls.g_class]).astype(float)
        return _sigmoid(self._design(Z[None, :]) @ self.weights.T + self.bias)[0]

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_features:
            raise ValueError(f"feature vector has length {z.size}, model expects {self.n_features}")
        if not np.all(np.isfinite(z)):
            raise ValueError("feature vector has non-finite entries")
        return z

    def _design(self, Z: np.ndarray) -> np.ndarray:
        X = _expand(Z, self.pair_norms)
        return (X - self.mean) / self.scale


def _expand(Z: np.ndarray, pair_norms: bool) -> np.ndarray:
    if not pair_norms or Z.shape[1] % 2:
        return Z
    norms = np.linalg.norm(Z.reshape(Z.shape[0], -1, 2), axis=2)
    return np.hstack([Z, norms])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def all_active(n_features, n_mu, n_g) -> PredictorModel:
    return PredictorModel("all_active", n_features, n_mu, n_g)


def distance_heuristic(n_features, n_mu, n_g, groups, distance=10.0) -> PredictorModel:
    return PredictorModel("distance_heuristic", n_features, n_mu, n_g, groups=groups, distance=distance)


def predict(model: PredictorModel, z, zeta=None) -> DualClass:
    """Binary dual classes for feature vector ``z``."""
    z = model._check(z)
    if zeta is not None and model.zeta is not None and not np.isclose(zeta, model.zeta):
        warnings.warn(f"model trained at zeta={model.zeta} used at zeta={zeta}", stacklevel=2)
    if model.kind == "all_active":
        return DualClass.ones(model.n_mu, model.n_g)
    if model.kind == "distance_heuristic":
        G = model.groups
        dist = np.linalg.norm(z.reshape(G, -1, 2), axis=2).min(axis=1)
        near = (dist <= model.distance).astype(int)
        return DualClass(np.repeat(near, model.n_mu // G), np.repeat(near, model.n_g // G))
    p = _sigmoid(model._design(z[None, :]) @ model.weights.T + model.bias)[0]
    bits = (p >= model.tau).astype(int)
    return DualClass(bits[:model.n_mu], bits[model.n_mu:])


# training -------------------------------------------------------------------

def _bce(P, Y, w0, w1):
    P = np.clip(P, 1e-12, 1 - 1e-12)
    return float(-(w1 * Y * np.log(P) + w0 * (1 - Y) * np.log(1 - P)).mean())


def confusion(pred, truth) -> dict:
    """Counts and recall/precision/accuracy for class 1 over all bits."""
    pred = np.asarray(pred, dtype=int).ravel()
    truth = np.asarray(truth, dtype=int).ravel()
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    tn = int(((pred == 0) & (truth == 0)).sum())
    total = max(tp + fp + fn + tn, 1)
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "recall": tp / (tp + fn) if tp + fn else 1.0,
            "precision": tp / (tp + fp) if tp + fp else 1.0,
            "accuracy": (tp + tn) / total}


def train(samples: list, epochs=300, step_size=0.05, class_weights=(1.0, 1.0), seed=0,
          eval_fraction=0.0, zeta=None, tau=0.5, l2=1e-4, pair_norms=True,
          augment=None) -> PredictorModel:
    """Fit one logistic classifier per output bit with weighted BCE and Adam.

    ``class_weights = (w0, w1)`` weight the negative and positive terms.
    With ``eval_fraction > 0`` a seeded held-out split is kept aside and its
    BCE and confusion counts are stored in ``model.report``. ``augment``
    maps the list of training samples to the list actually fitted (for
    example label-preserving relabellings); it never sees the held-out split.
    """
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    n_feat = samples[0].feature.size
    n_mu, n_g = samples[0].mu_label.size, samples[0].g_label.size
    for s in samples:
        if (s.feature.size, s.mu_label.size, s.g_label.size) != (n_feat, n_mu, n_g):
            raise ValueError("samples have inconsistent dimensions")
    rng = np.random.default_rng(seed)
    Z = np.stack([s.feature for s in samples])
    Y = np.stack([s.labels for s in samples]).astype(float)
    order = rng.permutation(len(samples))
    n_eval = int(round(eval_fraction * len(samples))) if len(samples) > 1 else 0
    ev, tr = order[:n_eval], order[n_eval:]
    if tr.size == 0:
        raise ValueError("evaluation split leaves no training samples")
    Z_fit, Y_fit = Z[tr], Y[tr]
    if augment is not None:
        fitted = list(augment([samples[i] for i in tr]))
        Z_fit = np.stack([s.feature for s in fitted])
        Y_fit = np.stack([s.labels for s in fitted]).astype(float)
        if Z_fit.shape[1] != n_feat or Y_fit.shape[1] != Y.shape[1]:
            raise ValueError("augmented samples change the feature or label layout")

    X_fit = _expand(Z_fit, pair_norms)
    mean = X_fit.mean(axis=0)
    scale = X_fit.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    X = (_expand(Z, pair_norms) - mean) / scale
    Xt, Yt = (X_fit - mean) / scale, Y_fit
    w0, w1 = float(class_weights[0]), float(class_weights[1])

    n_out = Y.shape[1]
    W = 0.01 * rng.standard_normal((n_out, X.shape[1]))
    b = np.zeros(n_out)
    params = [W, b]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    n_tr = Xt.shape[0]
    for it in range(1, epochs + 1):
        P = _sigmoid(Xt @ W.T + b)
        # derivative of the weighted BCE with respect to the logits
        dlogit = (w1 * Yt * (P - 1.0) + w0 * (1.0 - Yt) * P) / n_tr
        grads = [dlogit.T @ Xt + l2 * W, dlogit.sum(axis=0)]
        for k, (p, g) in enumerate(zip(params, grads)):
            m1[k] = beta1 * m1[k] + (1 - beta1) * g
            m2[k] = beta2 * m2[k] + (1 - beta2) * g * g
            p -= step_size * (m1[k] / (1 - beta1 ** it)) / (np.sqrt(m2[k] / (1 - beta2 ** it)) + adam_eps)

    model = PredictorModel("logistic", n_feat, n_mu, n_g, zeta=zeta, tau=tau, seed=seed,
                           pair_norms=pair_norms, mean=mean, scale=scale, weights=W, bias=b)
    report = {}
    for name, idx in (("train", tr), ("eval", ev)):
        if idx.size == 0:
            continue
        P = _sigmoid(X[idx] @ W.T + b)
        report[name] = {"bce": _bce(P, Y[idx], w0, w1), "n": int(idx.size),
                        **confusion(P >= tau, Y[idx])}
    model.report = report
    return model


# data collection ------------------------------------------------------------

def exact_dual(program) -> DualPoint:
    return solve_dual_exact(DualObjective(program))


def collect(programs: Iterable, exact_dual_solver=exact_dual) -> list:
    """One TrainingSample per instance whose exact dual solve succeeds.

    Items are either programs (empty feature) or ``(feature, program)``
    pairs. Failures are logged and skipped.
    """
    out = []
    for k, item in enumerate(programs):
        z, program = item if isinstance(item, tuple) else (np.zeros(0), item)
        try:
            y = exact_dual_solver(program)
        except (DualSolveError, np.linalg.LinAlgError, RuntimeError) as err:
            log.warning("skipping instance %d: %s", k, err)
            continue
        if y is None:
            log.warning("skipping instance %d: no dual returned", k)
            continue
        mu, g = labels_from_dual(y, program.lam)
        out.append(TrainingSample(z, mu, g))
    return out


# persistence ----------------------------------------------------------------

_HEADER_KEYS = ("kind", "n_features", "n_mu", "n_g", "zeta", "tau", "seed", "groups",
                "distance", "pair_norms")


def dumps_model(model: PredictorModel) -> str:
    header = {k: getattr(model, k) for k in _HEADER_KEYS}
    header["format"] = "shield-model-v1"
    body = {}
    if model.kind == "logistic":
        body = {"mean": model.mean.tolist(), "scale": model.scale.tolist(),
                "bias": model.bias.tolist(), "weights": model.weights.ravel().tolist()}
    return json.dumps(header, sort_keys=True) + "\n" + json.dumps(body, sort_keys=True) + "\n"


def loads_model(text: str) -> PredictorModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty model file")
    header = json.loads(lines[0])
    if header.pop("format", None) != "shield-model-v1":
        raise ValueError("not a shield model file")
    body = json.loads(lines[1]) if len(lines) > 1 else {}
    model = PredictorModel(**{k: header[k] for k in _HEADER_KEYS})
    if model.kind == "logistic":
        model.mean = np.asarray(body["mean"], dtype=float)
        model.scale = np.asarray(body["scale"], dtype=float)
        model.bias = np.asarray(body["bias"], dtype=float)
        model.weights = np.asarray(body["weights"], dtype=float).reshape(model.bias.size, -1)
    return model


def save_model(model: PredictorModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> PredictorModel:
    with open(path) as fh:
        return loads_model(fh.read())


def dump_samples(samples: list, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({"feature": s.feature.tolist(), "mu": s.mu_label.tolist(),
                                 "g": s.g_label.tolist()}) + "\n")


def load_samples(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(TrainingSample(rec["feature"], rec["mu"], rec["g"]))
    return out
