"""Dual-encoder training with knowledge distillation.

Two linear feature->embedding maps stand in for heavyweight sequence
encoders: contexts and responses embed separately and match via
sigmoid(inner product), so candidate embeddings can be cached. A slow,
accurate teacher scorer supervises training through an L2 term on the
score gap, added to the usual binary cross entropy on labels.
"""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import as_matrix, as_vector, check_finite, sigmoid_array

_MAGIC = b"DENC"
_VERSION = 1
_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class DualEncoder:
    """Separate linear maps for the context and response sides."""

    w_ctx: np.ndarray  # (F, D) float32
    w_resp: np.ndarray  # (F, D) float32

    def __post_init__(self):
        if self.w_ctx.shape != self.w_resp.shape or self.w_ctx.ndim != 2:
            raise ValueError("the two maps must share one (F, D) shape")
        check_finite(self.w_ctx, "w_ctx")
        check_finite(self.w_resp, "w_resp")

    @property
    def n_features(self) -> int:
        return self.w_ctx.shape[0]

    @property
    def dim(self) -> int:
        return self.w_ctx.shape[1]


@dataclass(frozen=True, eq=False)
class PairSet:
    """Labeled (context, response) feature pairs, optionally carrying
    cached teacher scores."""

    ctx_features: np.ndarray  # (P, F) float32
    resp_features: np.ndarray  # (P, F) float32
    labels: np.ndarray  # (P,) 0/1
    teacher_scores: Optional[np.ndarray] = None  # (P,) float32 in (0,1)

    def __post_init__(self):
        object.__setattr__(self, "ctx_features", as_matrix(self.ctx_features))
        object.__setattr__(self, "resp_features", as_matrix(self.resp_features))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.uint8))
        if self.ctx_features.shape != self.resp_features.shape:
            raise ValueError("context and response feature shapes differ")
        if self.labels.shape != (self.ctx_features.shape[0],):
            raise ValueError("need one label per pair")
        if np.any(self.labels > 1):
            raise ValueError("labels must be 0 or 1")
        if self.teacher_scores is not None:
            ts = np.asarray(self.teacher_scores, dtype=np.float32)
            if ts.shape != (len(self),):
                raise ValueError("need one teacher score per pair")
            object.__setattr__(self, "teacher_scores", ts)

    def __len__(self) -> int:
        return self.ctx_features.shape[0]


@dataclass(frozen=True)
class DistillConfig:
    # beta weights the squared gap to the teacher score; {0.2, 0.5, 1} is
    # the usual sweep range, but any non-negative value is accepted
    beta: float = 1.0
    learning_rate: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    seed: int = 42
    dim: Optional[int] = None  # embedding width; None means F // 2

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bad SGD parameters")
        if self.dim is not None and self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True, eq=False)
class DistillResult:
    encoder: DualEncoder
    epoch_losses: list


class PlantedTeacher:
    """Fixed random two-layer nonlinear scorer over concatenated features.

    Stands in for a fully optimized joint encoder: expensive in spirit,
    deterministic in fact. Scores are always strictly inside (0, 1).
    """

    def __init__(self, n_features: int, seed: int, hidden: int = 32):
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(2 * n_features), (hidden, 2 * n_features))
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden)
        self.gain = 2.0
        self.n_features = n_features

    def score_batch(self, ctx_features, resp_features) -> np.ndarray:
        z = np.concatenate(
            [as_matrix(ctx_features), as_matrix(resp_features)], axis=1
        ).astype(np.float64)
        h = np.tanh(z @ self.w1.T)
        return sigmoid_array(self.gain * (h @ self.w2))

    def __call__(self, ctx_feature, resp_feature) -> float:
        return float(
            self.score_batch(
                as_vector(ctx_feature)[None, :], as_vector(resp_feature)[None, :]
            )[0]
        )


def bce(score: float, label: int) -> float:
    """Binary cross entropy with scores clamped away from {0, 1}."""
    s = min(max(float(score), _CLAMP), 1.0 - _CLAMP)
    return -label * np.log(s) - (1 - label) * np.log(1.0 - s)


def kd_loss(score_dual: float, score_cross: float, label: int, beta: float) -> float:
    """Distillation objective: beta * squared score gap + label BCE."""
    gap = float(score_dual) - float(score_cross)
    return beta * gap * gap + bce(score_dual, label)


def encode(encoder: DualEncoder, features, side: str) -> np.ndarray:
    """Embed a raw feature vector with the requested side's linear map."""
    features = as_vector(features)
    if side == "context":
        w = encoder.w_ctx
    elif side == "response":
        w = encoder.w_resp
    else:
        raise ValueError(f"side must be 'context' or 'response', got {side!r}")
    if features.shape[0] != encoder.n_features:
        raise ValueError(
            f"feature length {features.shape[0]} != encoder F {encoder.n_features}"
        )
    return (features.astype(np.float64) @ w.astype(np.float64)).astype(np.float32)


def pair_scores(encoder: DualEncoder, ctx_features, resp_features) -> np.ndarray:
    """Row-wise dual scores sigmoid(ctx_emb . resp_emb) in float64."""
    ctx = as_matrix(ctx_features).astype(np.float64)
    resp = as_matrix(resp_features).astype(np.float64)
    ce = ctx @ encoder.w_ctx.astype(np.float64)
    re = resp @ encoder.w_resp.astype(np.float64)
    return sigmoid_array(np.einsum("ij,ij->i", ce, re))


def loss_and_gradients(
    w_ctx: np.ndarray,
    w_resp: np.ndarray,
    ctx_features: np.ndarray,
    resp_features: np.ndarray,
    teacher_scores: np.ndarray,
    labels: np.ndarray,
    beta: float,
):
    """Mean distillation loss over the batch and its analytic gradients
    w.r.t. both linear maps.

    The derivative of the BCE term through the sigmoid collapses to
    (score - label), so no clamping enters the gradient path.
    """
    ctx = np.asarray(ctx_features, dtype=np.float64)
    resp = np.asarray(resp_features, dtype=np.float64)
    sc = np.asarray(teacher_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    p = ctx.shape[0]

    ce = ctx @ np.asarray(w_ctx, dtype=np.float64)
    re = resp @ np.asarray(w_resp, dtype=np.float64)
    q = np.einsum("ij,ij->i", ce, re)
    s = sigmoid_array(q)

    s_clamped = np.clip(s, _CLAMP, 1.0 - _CLAMP)
    losses = (
        beta * (s - sc) ** 2
        - y * np.log(s_clamped)
        - (1.0 - y) * np.log(1.0 - s_clamped)
    )
    dq = 2.0 * beta * (s - sc) * s * (1.0 - s) + (s - y)
    g_ctx = ctx.T @ (dq[:, None] * re) / p
    g_resp = resp.T @ (dq[:, None] * ce) / p
    return float(losses.mean()), g_ctx, g_resp


def _teacher_scores_for(pairs: PairSet, teacher) -> np.ndarray:
    if teacher is not None:
        if hasattr(teacher, "score_batch"):
            return np.asarray(
                teacher.score_batch(pairs.ctx_features, pairs.resp_features),
                dtype=np.float64,
            )
        return np.array(
            [
                float(teacher(pairs.ctx_features[i], pairs.resp_features[i]))
                for i in range(len(pairs))
            ]
        )
    if pairs.teacher_scores is None:
        raise ValueError("no teacher given and no cached teacher scores")
    return pairs.teacher_scores.astype(np.float64)


def train_distilled(pairs: PairSet, teacher, cfg: DistillConfig) -> DistillResult:
    """Mini-batch SGD on the distillation objective.

    Teacher scores are computed once up front and reused every epoch,
    mirroring a frozen, fully trained teacher. Pass teacher=None to use
    the scores cached on the pair set.
    """
    if len(pairs) < 2 or pairs.labels.min() == pairs.labels.max():
        raise ValueError("need at least one positive and one negative pair")
    scores_cross = _teacher_scores_for(pairs, teacher)
    if np.any(scores_cross <= 0.0) or np.any(scores_cross >= 1.0):
        raise ValueError("teacher scores must lie strictly inside (0, 1)")

    n_feat = pairs.ctx_features.shape[1]
    dim = cfg.dim if cfg.dim is not None else max(2, n_feat // 2)
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(n_feat * np.sqrt(dim))
    w_ctx = rng.normal(0.0, scale, (n_feat, dim))
    w_resp = rng.normal(0.0, scale, (n_feat, dim))

    ctx = pairs.ctx_features.astype(np.float64)
    resp = pairs.resp_features.astype(np.float64)
    y = pairs.labels.astype(np.float64)
    epoch_losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(pairs))
        running = 0.0
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            loss, g_ctx, g_resp = loss_and_gradients(
                w_ctx, w_resp, ctx[batch], resp[batch],
                scores_cross[batch], y[batch], cfg.beta,
            )
            w_ctx -= cfg.learning_rate * g_ctx
            w_resp -= cfg.learning_rate * g_resp
            running += loss * batch.size
        epoch_losses.append(running / len(pairs))

    encoder = DualEncoder(
        w_ctx.astype(np.float32), w_resp.astype(np.float32)
    )
    return DistillResult(encoder, epoch_losses)


def ranking_instances_by_teacher(
    teacher, contexts, response_pool, n_candidates: int, seed: int
) -> list:
    """Recall@1/N instances whose ground truth is the teacher's favorite.

    Each context draws n_candidates distinct responses from the pool; the
    one the teacher scores highest is the ground truth and the rest are
    distractors. Ranking a student on these measures how faithfully it
    reproduces the teacher's preferences.
    """
    from .search import RankingInstance

    contexts = as_matrix(contexts)
    response_pool = as_matrix(response_pool)
    if n_candidates > response_pool.shape[0]:
        raise ValueError("response pool smaller than requested candidate count")
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(contexts.shape[0]):
        ids = rng.choice(response_pool.shape[0], size=n_candidates, replace=False)
        scores = teacher.score_batch(
            np.repeat(contexts[i : i + 1], n_candidates, axis=0),
            response_pool[ids],
        )
        gt = int(ids[int(np.argmax(scores))])
        rest = tuple(int(j) for j in ids if j != gt)
        instances.append(RankingInstance(i, gt, rest))
    return instances


def save_encoder(encoder: DualEncoder, path) -> None:
    """Write the bit-exact DENC container."""
    header = _MAGIC + bytes([_VERSION])
    header += struct.pack("<II", encoder.n_features, encoder.dim)
    body = encoder.w_ctx.astype("<f4").tobytes()
    body += encoder.w_resp.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_encoder(path) -> DualEncoder:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 5 or blob[4] != _VERSION:
        raise ValueError(
            f"unsupported DENC version {blob[4] if len(blob) > 4 else 'missing'}"
        )
    if len(blob) < 13:
        raise ValueError(f"truncated header: expected 13 bytes, found {len(blob)}")
    f, d = struct.unpack("<II", blob[5:13])
    expected = 13 + 2 * f * d * 4
    if len(blob) != expected:
        raise ValueError(
            f"truncated payload: expected {expected} bytes, found {len(blob)}"
        )
    half = 13 + f * d * 4
    w_ctx = np.frombuffer(blob[13:half], dtype="<f4").reshape(f, d).copy()
    w_resp = np.frombuffer(blob[half:], dtype="<f4").reshape(f, d).copy()
    return DualEncoder(w_ctx, w_resp)
