"""Hyperplane-projected translation embedding (TransH form) trained with a
positive-only hinge objective.

Every triple ``(h, r, t)`` is scored by

    d = || (l_h - (w_r . l_h) w_r) + l_r - (l_t - (w_r . l_t) w_r) ||

and training minimizes ``sum max(0, d - margin)`` over observed triples with
Adam, renormalizing each hyperplane normal ``w_r`` after every step.
A margin-ranking objective with corrupted triples is kept only as an
ablation mode.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .tkg import ENTITY_KINDS, HAS_POI, RELATION_KINDS, TripKnowledgeGraph

log = logging.getLogger(__name__)

NORMS = ("L1", "L2")
POI_MODES = ("augment", "pretrain", "off")
NEG_MODES = ("off", "random_replacement", "controlled_replacement")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 148
    margin: float = 1.0
    learning_rate: float = 0.003
    batch_size: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 500
    seed: int = 0
    distance_norm: str = "L2"
    poi_balancing: str = "augment"
    pretrain_epochs: int = 50
    negative_sampling: str = "off"
    orthogonality_weight: float = 0.0
    entity_max_norm: float | None = None
    early_stop_fraction: float = 0.999
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError("dim must be positive")
        if not self.margin > 0:
            raise ConfigError("margin must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.distance_norm not in NORMS:
            raise ConfigError(f"distance_norm must be one of {NORMS}")
        if self.poi_balancing not in POI_MODES:
            raise ConfigError(f"poi_balancing must be one of {POI_MODES}")
        if self.negative_sampling not in NEG_MODES:
            raise ConfigError(f"negative_sampling must be one of {NEG_MODES}")
        if self.orthogonality_weight < 0:
            raise ConfigError("orthogonality_weight must be nonnegative")


@dataclass
class EmbeddingModel:
    entity_vecs: np.ndarray
    rel_translations: np.ndarray
    rel_normals: np.ndarray
    graph_digest: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.entity_vecs.copy(), self.rel_translations.copy(),
                              self.rel_normals.copy(), self.graph_digest, dict(self.meta))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_vecs).all() and np.isfinite(self.rel_translations).all()
                    and np.isfinite(self.rel_normals).all())

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint holding the three matrices, the graph
        digest and metadata. Entries carry a fixed timestamp so identical
        models give identical bytes."""
        arrays = {
            "entity_vecs": self.entity_vecs,
            "rel_translations": self.rel_translations,
            "rel_normals": self.rel_normals,
            "graph_digest": np.array(self.graph_digest),
            "meta": np.array(json.dumps(self.meta, sort_keys=True)),
        }
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path, graph: TripKnowledgeGraph | None = None) -> "EmbeddingModel":
        with np.load(path, allow_pickle=False) as z:
            model = cls(z["entity_vecs"], z["rel_translations"], z["rel_normals"],
                        str(z["graph_digest"]), json.loads(str(z["meta"])))
        if graph is not None:
            digest = graph.digest()
            if model.graph_digest != digest:
                raise DataError(f"checkpoint was trained on graph {model.graph_digest[:12]}, "
                                f"not on the supplied graph {digest[:12]}")
            if model.entity_vecs.shape[0] != graph.num_entities or model.rel_normals.shape[0] != graph.num_relations:
                raise DataError("checkpoint shape does not match graph registries")
        return model


@dataclass
class LossReport:
    epoch: int
    phase: str
    mean_loss: float
    within_margin: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# ---------------------------------------------------------------------------
# scoring primitives


def project(v, w, tol: float = 1e-9) -> np.ndarray:
    """Project ``v`` onto the hyperplane with unit normal ``w``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    norms = np.linalg.norm(w, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("hyperplane normal must have unit L2 norm")
    return v - np.sum(w * v, axis=-1, keepdims=True) * w


def _norm(x: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(x).sum(axis=-1)
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def _residual(model: EmbeddingModel, triples: np.ndarray) -> np.ndarray:
    h = model.entity_vecs[triples[:, 0]]
    t = model.entity_vecs[triples[:, 2]]
    w = model.rel_normals[triples[:, 1]]
    e = h - t
    return e - np.einsum("ij,ij->i", w, e)[:, None] * w + model.rel_translations[triples[:, 1]]


def distances(model: EmbeddingModel, triples, norm: str = "L2") -> np.ndarray:
    """Vectorized triple distances for an ``(n, 3)`` index array."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return _norm(_residual(model, triples), norm)


def triple_distance(model: EmbeddingModel, triple, norm: str = "L2") -> float:
    h, r, t = (int(x) for x in triple)
    w = model.rel_normals[r]
    hp = project(model.entity_vecs[h], w)
    tp = project(model.entity_vecs[t], w)
    return float(_norm(hp + model.rel_translations[r] - tp, norm))


def positive_loss(model: EmbeddingModel, triple, margin: float, norm: str = "L2") -> float:
    if not margin > 0:
        raise ConfigError("margin must be positive")
    return max(0.0, triple_distance(model, triple, norm) - margin)


def negative_sampling_loss(model: EmbeddingModel, pos, neg, margin: float, norm: str = "L2") -> float:
    return max(0.0, triple_distance(model, pos, norm) + margin - triple_distance(model, neg, norm))


def distance_grads(h, r, w, t, norm: str = "L2"):
    """Distances and their gradients w.r.t. head, translation, normal, tail.

    Rows are independent instances. ``w`` is treated as a free vector (the
    unit constraint is restored by renormalization outside).
    """
    e = h - t
    we = np.einsum("ij,ij->i", w, e)
    p = e - we[:, None] * w + r
    if norm == "L1":
        d = np.abs(p).sum(axis=1)
        g = np.sign(p)
    else:
        d = np.sqrt(np.einsum("ij,ij->i", p, p))
        g = p / np.where(d > 0, d, 1.0)[:, None]
    wg = np.einsum("ij,ij->i", w, g)
    gh = g - wg[:, None] * w
    gw = -(wg[:, None] * e + we[:, None] * g)
    return d, gh, g, gw, -gh


def positive_loss_grads(h, r, w, t, margin: float, norm: str = "L2"):
    """Hinge loss ``max(0, d - margin)`` per row and its gradients
    ``(loss, d/dh, d/dr, d/dw, d/dt)``; zero subgradient at the kink."""
    h, r, w, t = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (h, r, w, t))
    d, gh, gr, gw, gt = distance_grads(h, r, w, t, norm)
    active = (d > margin).astype(float)[:, None]
    return np.maximum(d - margin, 0.0), active * gh, active * gr, active * gw, active * gt


# ---------------------------------------------------------------------------
# model construction and training


def init_model(graph: TripKnowledgeGraph, cfg: TrainConfig) -> EmbeddingModel:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / math.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(graph.num_entities, cfg.dim))
    rel = rng.uniform(-bound, bound, size=(graph.num_relations, cfg.dim))
    normals = rng.uniform(-bound, bound, size=(graph.num_relations, cfg.dim))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return EmbeddingModel(ent, rel, normals, graph.digest(), {"dim": cfg.dim, "seed": cfg.seed})


def poi_replication_factor(n_trip: int, n_poi: int) -> int:
    if n_poi == 0:
        return 1
    return max(1, math.ceil(n_trip / (4 * n_poi)))


@dataclass
class TrainingSet:
    triples: np.ndarray
    pretrain: np.ndarray | None
    mode: str
    replication: int = 1


def balance_poi(graph: TripKnowledgeGraph, mode: str) -> TrainingSet:
    """Training multiset with the POI facts rescaled against the trip facts."""
    if mode not in POI_MODES:
        raise ConfigError(f"poi_balancing must be one of {POI_MODES}")
    poi = graph.poi_mask()
    n_poi = int(poi.sum())
    if mode != "off" and n_poi == 0:
        log.warning("graph has no Has_POI triples; poi balancing disabled")
        mode = "off"
    if mode == "augment":
        k = poi_replication_factor(len(graph.triples) - n_poi, n_poi)
        extra = np.repeat(graph.triples[poi], k - 1, axis=0)
        return TrainingSet(np.concatenate([graph.triples, extra]), None, mode, k)
    if mode == "pretrain":
        return TrainingSet(graph.triples, graph.triples[poi], mode)
    return TrainingSet(graph.triples, None, mode)


class Adam:
    """Dense Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _kind_arrays(graph: TripKnowledgeGraph):
    ent_kind = np.array([ENTITY_KINDS.index(e.kind) for e in graph.entities], dtype=np.int64)
    rel_kind = np.array([RELATION_KINDS.index(r.kind) for r in graph.relations], dtype=np.int64)
    return ent_kind, rel_kind


def corrupt(triples: np.ndarray, graph: TripKnowledgeGraph, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Replace one element of each triple.

    ``random_replacement`` draws the substitute uniformly from all entities
    (or relations); ``controlled_replacement`` restricts it to items of a
    different kind than the one replaced.
    """
    n = len(triples)
    out = triples.copy()
    slot = rng.integers(0, 3, size=n)
    n_ent, n_rel = graph.num_entities, graph.num_relations
    if mode == "random_replacement":
        ent_draw = rng.integers(0, n_ent, size=n)
        rel_draw = rng.integers(0, n_rel, size=n)
        out[slot == 0, 0] = ent_draw[slot == 0]
        out[slot == 2, 2] = ent_draw[slot == 2]
        out[slot == 1, 1] = rel_draw[slot == 1]
        return out
    if mode != "controlled_replacement":
        raise ConfigError(f"unknown corruption mode {mode!r}")
    ent_kind, rel_kind = _kind_arrays(graph)
    for i in range(n):
        s = slot[i]
        if s == 1:
            pool = np.flatnonzero(rel_kind != rel_kind[triples[i, 1]])
        else:
            pool = np.flatnonzero(ent_kind != ent_kind[triples[i, s]])
        if len(pool) == 0:
            continue
        out[i, s] = pool[rng.integers(0, len(pool))]
    return out


def _scatter(shape, idx_parts, val_parts):
    g = np.zeros(shape)
    np.add.at(g, np.concatenate(idx_parts), np.concatenate(val_parts))
    return g


def _batch_gradients(model: EmbeddingModel, pos: np.ndarray, neg: np.ndarray | None, cfg: TrainConfig):
    """Loss value and dense gradients for one mini-batch."""
    E, R, W = model.entity_vecs, model.rel_translations, model.rel_normals
    norm = cfg.distance_norm
    d, gh, gr, gw, gt = distance_grads(E[pos[:, 0]], R[pos[:, 1]], W[pos[:, 1]], E[pos[:, 2]], norm)
    if neg is None:
        active = d > cfg.margin  # kink at d == margin gets zero subgradient
        loss = float(np.sum(d[active] - cfg.margin))
        coef = active.astype(float)
        e_idx = [pos[:, 0], pos[:, 2]]
        e_val = [coef[:, None] * gh, coef[:, None] * gt]
        r_idx = [pos[:, 1]]
        r_val = [coef[:, None] * gr]
        w_val = [coef[:, None] * gw]
    else:
        dn, nh, nr, nw, nt = distance_grads(E[neg[:, 0]], R[neg[:, 1]], W[neg[:, 1]], E[neg[:, 2]], norm)
        z = d + cfg.margin - dn
        active = z > 0
        loss = float(np.sum(z[active]))
        c = active.astype(float)[:, None]
        e_idx = [pos[:, 0], pos[:, 2], neg[:, 0], neg[:, 2]]
        e_val = [c * gh, c * gt, -c * nh, -c * nt]
        r_idx = [pos[:, 1], neg[:, 1]]
        r_val = [c * gr, -c * nr]
        w_val = [c * gw, -c * nw]
    gE = _scatter(E.shape, e_idx, e_val)
    gR = _scatter(R.shape, r_idx, r_val)
    gW = _scatter(W.shape, r_idx, w_val)
    if cfg.orthogonality_weight > 0:
        rels = np.unique(np.concatenate(r_idx))
        lr_, w_ = R[rels], W[rels]
        a = np.einsum("ij,ij->i", w_, lr_)
        b = np.maximum(np.einsum("ij,ij->i", lr_, lr_), 1e-12)
        loss += cfg.orthogonality_weight * float(np.sum(a * a / b))
        gW[rels] += cfg.orthogonality_weight * (2 * a / b)[:, None] * lr_
        gR[rels] += cfg.orthogonality_weight * ((2 * a / b)[:, None] * w_ - (2 * a * a / (b * b))[:, None] * lr_)
    return loss, gE, gR, gW


def _renormalize(model: EmbeddingModel, cfg: TrainConfig) -> None:
    W = model.rel_normals
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    if cfg.entity_max_norm is not None:
        n = np.linalg.norm(model.entity_vecs, axis=1, keepdims=True)
        model.entity_vecs *= np.minimum(1.0, cfg.entity_max_norm / np.maximum(n, 1e-12))


def epoch_summary(model: EmbeddingModel, triples: np.ndarray, cfg: TrainConfig) -> tuple[float, float]:
    if len(triples) == 0:
        return 0.0, 1.0
    d = distances(model, triples, cfg.distance_norm)
    return float(np.mean(np.maximum(d - cfg.margin, 0.0))), float(np.mean(d <= cfg.margin))


def train(graph: TripKnowledgeGraph, cfg: TrainConfig, model: EmbeddingModel | None = None,
          max_steps: int | None = None) -> tuple[EmbeddingModel, list[LossReport]]:
    """Train from ``init_model`` (or ``model``) and return per-epoch reports.

    ``max_steps`` caps the number of optimizer steps (diagnostics only).
    """
    if len(graph.triples) == 0:
        raise DataError("cannot train on an empty graph")
    model = init_model(graph, cfg) if model is None else model.copy()
    data = balance_poi(graph, cfg.poi_balancing)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam([model.entity_vecs, model.rel_translations, model.rel_normals],
               cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    reports: list[LossReport] = []
    steps = 0
    start = time.perf_counter()

    phases = []
    if data.pretrain is not None and cfg.pretrain_epochs > 0 and cfg.epochs > 0:
        phases.append(("pretrain", data.pretrain, cfg.pretrain_epochs))
    phases.append(("train", data.triples, cfg.epochs))

    for phase, pool, n_epochs in phases:
        streak = 0
        for epoch in range(n_epochs):
            order = rng.permutation(len(pool))
            for s in range(0, len(order), cfg.batch_size):
                batch = pool[order[s:s + cfg.batch_size]]
                neg = corrupt(batch, graph, cfg.negative_sampling, rng) if cfg.negative_sampling != "off" else None
                _, gE, gR, gW = _batch_gradients(model, batch, neg, cfg)
                opt.step([gE, gR, gW])
                _renormalize(model, cfg)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            if not model.is_finite():
                raise DivergenceError(len(reports))
            mean_loss, within = epoch_summary(model, pool if phase == "pretrain" else graph.triples, cfg)
            reports.append(LossReport(len(reports), phase, mean_loss, within, time.perf_counter() - start))
            if max_steps is not None and steps >= max_steps:
                break
            if phase == "train" and cfg.negative_sampling == "off":
                streak = streak + 1 if within > cfg.early_stop_fraction else 0
                if streak >= cfg.early_stop_patience:
                    log.info("early stop after epoch %d (%.4f within margin)", epoch, within)
                    break
        if max_steps is not None and steps >= max_steps:
            break
    model.meta.update({"steps": steps, "epochs_run": len(reports)})
    return model, reports


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
