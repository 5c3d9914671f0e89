"""Episodic machinery: episodes, prototypes, distance kernels, and losses.

Distances come in three flavors for a query q_i against prototype p_j:

  plain Euclidean      e_ij = ||q_i - p_j||
  normalized Euclidean E_ij = e_ij / (sum_k e_ik + eps)      (row-stochastic)
  cosine distance      C_ij = 1 - q_i . p_j / (||q_i|| ||p_j|| + eps)

and the combined metric D = alpha * E + (1 - alpha) * C.  Both episodic
losses are softmax negative log-likelihoods over negated distances,
summed over queries; gradients flow through query and prototype sides so
training differentiates through the support mean.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .rng import substream

_TINY = 1e-300  # guards 0/0 in gradient direction terms only


@dataclass
class Episode:
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    support_idx: np.ndarray
    query_idx: np.ndarray


@dataclass
class Prototypes:
    """One mean-embedding row per class, class ids ascending."""

    vectors: np.ndarray
    class_ids: list

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.class_ids):
            raise ValueError("one prototype row per class id required")
        if list(self.class_ids) != sorted(self.class_ids):
            raise ValueError("class ids must be ascending")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("prototypes must be finite")

    def to_json(self) -> str:
        return json.dumps(
            {
                "class_ids": [int(c) for c in self.class_ids],
                "vectors": self.vectors.tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Prototypes":
        doc = json.loads(text)
        return cls(np.asarray(doc["vectors"]), doc["class_ids"])


@dataclass
class DistanceMatrix:
    values: np.ndarray
    kind: str  # euclid_plain | euclid_normalized | cosine | combined
    alpha: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("distance matrix must be 2-D")
        kinds = ("euclid_plain", "euclid_normalized", "cosine", "combined")
        if self.kind not in kinds:
            raise ValueError(f"unknown distance kind {self.kind!r}")


@dataclass
class DualSpaceConfig:
    alpha: float = 0.5
    norm_eps: float = 1e-12

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.norm_eps <= 0:
            raise ValueError("norm_eps must be positive")


def sample_episode(
    train: LabeledDataset, k_support: int, k_query: int, seed: int
) -> Episode:
    """Draw one support/query episode, deterministically per seed.

    Per class: k_support rows without replacement, then k_query query
    rows from the remainder (without replacement when enough rows remain,
    with replacement otherwise).  Support and query are index-disjoint.
    """
    rng = substream(seed, "episode")
    sup_idx, qry_idx = [], []
    classes = np.unique(train.labels)
    for c in classes:
        idx = np.flatnonzero(train.labels == c)
        if len(idx) < k_support:
            raise ValueError(f"class {c} has {len(idx)} rows < k_support {k_support}")
        perm = idx[rng.permutation(len(idx))]
        support = perm[:k_support]
        rest = perm[k_support:]
        if len(rest) == 0:
            raise ValueError(f"class {c}: no rows left for the query set")
        if len(rest) >= k_query:
            query = rest[:k_query]
        else:
            query = rng.choice(rest, size=k_query, replace=True)
        sup_idx.append(support)
        qry_idx.append(query)
    sup_idx = np.concatenate(sup_idx)
    qry_idx = np.concatenate(qry_idx)
    return Episode(
        support_x=train.features[sup_idx],
        support_y=train.labels[sup_idx],
        query_x=train.features[qry_idx],
        query_y=train.labels[qry_idx],
        support_idx=sup_idx,
        query_idx=qry_idx,
    )


def compute_prototypes(embeddings: np.ndarray, labels: np.ndarray) -> Prototypes:
    """Arithmetic mean of each class's embeddings, classes ascending."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) == 0:
        raise ValueError("no embeddings to average")
    vectors = np.vstack([embeddings[labels == c].mean(axis=0) for c in classes])
    return Prototypes(vectors, [int(c) for c in classes])


def _check_dims(queries, protos):
    if queries.shape[1] != protos.vectors.shape[1]:
        raise ValueError(
            f"query dim {queries.shape[1]} != prototype dim {protos.vectors.shape[1]}"
        )


def plain_euclidean(queries: np.ndarray, protos: Prototypes) -> DistanceMatrix:
    queries = np.asarray(queries, dtype=np.float64)
    _check_dims(queries, protos)
    diff = queries[:, None, :] - protos.vectors[None, :, :]
    return DistanceMatrix(np.sqrt((diff * diff).sum(axis=2)), "euclid_plain")


def normalized_euclidean(
    queries: np.ndarray, protos: Prototypes, eps: float = 1e-12
) -> DistanceMatrix:
    plain = plain_euclidean(queries, protos).values
    rows = plain.sum(axis=1, keepdims=True) + eps
    return DistanceMatrix(plain / rows, "euclid_normalized")


def cosine_distances(
    queries: np.ndarray, protos: Prototypes, eps: float = 1e-12
) -> DistanceMatrix:
    queries = np.asarray(queries, dtype=np.float64)
    _check_dims(queries, protos)
    qn = np.linalg.norm(queries, axis=1)
    pn = np.linalg.norm(protos.vectors, axis=1)
    denom = qn[:, None] * pn[None, :] + eps
    sim = (queries @ protos.vectors.T) / denom
    return DistanceMatrix(1.0 - sim, "cosine")


def combined_distances(
    d_e: DistanceMatrix, d_c: DistanceMatrix, cfg: DualSpaceConfig
) -> DistanceMatrix:
    if d_e.kind != "euclid_normalized" or d_c.kind != "cosine":
        raise ValueError(f"combined needs (euclid_normalized, cosine), got ({d_e.kind}, {d_c.kind})")
    if d_e.values.shape != d_c.values.shape:
        raise ValueError("distance matrices differ in shape")
    values = cfg.alpha * d_e.values + (1.0 - cfg.alpha) * d_c.values
    return DistanceMatrix(values, "combined", alpha=cfg.alpha)


def _nll_over_neg_distances(values: np.ndarray, query_y, class_ids):
    """Sum over queries of -log softmax(-row)[true class]; also the gradient
    dLoss/dD = onehot - softmax(-D)."""
    n, c = values.shape
    class_pos = {cid: j for j, cid in enumerate(class_ids)}
    try:
        y = np.array([class_pos[int(label)] for label in query_y])
    except KeyError as exc:
        raise ValueError(f"query label {exc} not among classes {list(class_ids)}") from None
    neg = -values
    shift = neg.max(axis=1, keepdims=True)
    logsum = shift.squeeze(1) + np.log(np.exp(neg - shift).sum(axis=1))
    loss = float((values[np.arange(n), y] + logsum).sum())
    softmax = np.exp(neg - logsum[:, None])
    onehot = np.zeros_like(values)
    onehot[np.arange(n), y] = 1.0
    return loss, onehot - softmax


def dual_space_loss(d_combined: DistanceMatrix, query_y):
    """Loss (summed over queries) and dLoss/dD for the combined metric."""
    if d_combined.kind != "combined":
        raise ValueError(f"dual_space_loss needs a combined matrix, got {d_combined.kind}")
    return _nll_over_neg_distances(
        d_combined.values, query_y, list(range(d_combined.values.shape[1]))
    )


def prototypical_loss(queries: np.ndarray, protos: Prototypes, query_y):
    """Same softmax NLL with plain (unnormalized) Euclidean distances."""
    plain = plain_euclidean(queries, protos)
    return _nll_over_neg_distances(plain.values, query_y, protos.class_ids)


def estimate(embeddings: np.ndarray, protos: Prototypes, cfg: DualSpaceConfig) -> np.ndarray:
    """Nearest prototype under the combined metric; ties take the lowest class id."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    d_e = normalized_euclidean(embeddings, protos, cfg.norm_eps)
    d_c = cosine_distances(embeddings, protos, cfg.norm_eps)
    d = combined_distances(d_e, d_c, cfg)
    winners = np.argmin(d.values, axis=1)
    class_ids = np.asarray(protos.class_ids)
    return class_ids[winners]


def episode_loss_and_grads(
    support_emb: np.ndarray,
    support_y,
    query_emb: np.ndarray,
    query_y,
    loss_kind: str,
    cfg: DualSpaceConfig,
):
    """Episodic loss plus gradients w.r.t. support and query embeddings.

    Prototypes are the support class means, so prototype gradients are
    redistributed uniformly over each class's support rows.  Returns
    (loss_sum, grad_support, grad_query).
    """
    support_emb = np.asarray(support_emb, dtype=np.float64)
    query_emb = np.asarray(query_emb, dtype=np.float64)
    protos = compute_prototypes(support_emb, support_y)
    p = protos.vectors  # (C, d)
    q = query_emb  # (n, d)
    eps = cfg.norm_eps

    diff = q[:, None, :] - p[None, :, :]  # (n, C, d)
    e = np.sqrt((diff * diff).sum(axis=2))  # (n, C)
    unit = diff / np.maximum(e, _TINY)[:, :, None]

    if loss_kind == "proto":
        loss, g_dist = _nll_over_neg_distances(e, query_y, protos.class_ids)
        g_e = g_dist
        g_q = (g_e[:, :, None] * unit).sum(axis=1)
        g_p = -(g_e[:, :, None] * unit).sum(axis=0)
    elif loss_kind == "dspace":
        row_sum = e.sum(axis=1) + eps  # (n,)
        d_e = e / row_sum[:, None]
        qn = np.linalg.norm(q, axis=1)  # (n,)
        pn = np.linalg.norm(p, axis=1)  # (C,)
        denom = qn[:, None] * pn[None, :] + eps  # (n, C)
        dot = q @ p.T
        d_c = 1.0 - dot / denom
        d = cfg.alpha * d_e + (1.0 - cfg.alpha) * d_c
        loss, g_dist = _nll_over_neg_distances(d, query_y, protos.class_ids)
        g_de = cfg.alpha * g_dist
        g_dc = (1.0 - cfg.alpha) * g_dist

        # normalized-Euclidean chain: E_ij = e_ij / (S_i + eps)
        g_e = g_de / row_sum[:, None] - (
            (g_de * e).sum(axis=1) / row_sum**2
        )[:, None]
        g_q = (g_e[:, :, None] * unit).sum(axis=1)
        g_p = -(g_e[:, :, None] * unit).sum(axis=0)

        # cosine chain: C_ij = 1 - dot_ij / denom_ij, so dL/d(sim) = -g_dc
        g_sim = -g_dc
        a = g_sim / denom  # (n, C)
        g_q += a @ p
        coef_q = (g_sim * dot * pn[None, :] / denom**2).sum(axis=1)  # (n,)
        g_q -= q * (coef_q / np.maximum(qn, _TINY))[:, None]
        g_p += a.T @ q
        coef_p = (g_sim * dot * qn[:, None] / denom**2).sum(axis=0)  # (C,)
        g_p -= p * (coef_p / np.maximum(pn, _TINY))[:, None]
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    # prototypes are class means: spread each prototype gradient evenly
    g_support = np.zeros_like(support_emb)
    support_y = np.asarray(support_y)
    for j, c in enumerate(protos.class_ids):
        members = support_y == c
        g_support[members] = g_p[j] / members.sum()
    return loss, g_support, g_q
