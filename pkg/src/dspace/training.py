"""The four learning regimes: offline, online, prototypical, dual-space.

Offline shuffles and runs epochs of cross-entropy minibatches; online
consumes the stream in arrival order under a fixed update budget; the
prototypical regimes train episodically in embedding mode, with
gradients flowing through both query and support (prototype) paths.
Every regime is a pure function of (datasets, config, seed).
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LabeledDataset
from .fewshot import (
    DualSpaceConfig,
    Prototypes,
    compute_prototypes,
    episode_loss_and_grads,
    sample_episode,
)
from .network import (
    NetConfig,
    adam_step,
    backward,
    forward,
    init_optimizer_state,
    init_params,
)
from .rng import derive_seed, substream

REGIMES = ("offline", "online", "proto", "dspace")
MODELS = ("mlp", "mlp_attention")


@dataclass
class TrainConfig:
    regime: str = "dspace"
    model: str = "mlp"
    epochs: int = 10
    batch_size: int = 32
    max_online_updates: int = 50
    episodes_per_epoch: int = 20
    k_support: int = 5
    k_query: int = 15
    dual_space: DualSpaceConfig = field(default_factory=DualSpaceConfig)
    lr: float = 1e-3
    weight_decay: float = 0.01
    hidden_dims: tuple = (64, 32)
    dropout_p: float = 0.2
    train_n: int | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dual_space, dict):
            self.dual_space = DualSpaceConfig(**self.dual_space)
        self.hidden_dims = tuple(self.hidden_dims)
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def validation_errors(self) -> list:
        errors = []
        if self.regime not in REGIMES:
            errors.append(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.model not in MODELS:
            errors.append(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("epochs", "batch_size", "max_online_updates",
                     "episodes_per_epoch", "k_support", "k_query"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.train_n is not None and self.train_n < 2:
            errors.append("train_n must be >= 2")
        if self.seed < 0:
            errors.append("seed must be non-negative")
        return errors

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden_dims"] = list(self.hidden_dims)
        return doc


@dataclass
class RunResult:
    regime: str
    model: str
    seed: int
    loss_curve: list  # (step, training loss, validation loss | None)
    params: object
    net_config: NetConfig
    prototypes: Prototypes | None
    wall_time: float
    train_config: TrainConfig

    def __post_init__(self):
        for step, train_loss, val_loss in self.loss_curve:
            if not np.isfinite(train_loss) or (
                val_loss is not None and not np.isfinite(val_loss)
            ):
                raise ValueError(f"non-finite loss recorded at step {step}")


def cross_entropy_loss(logits: np.ndarray, labels):
    """Mean softmax NLL over the batch plus dLoss/dlogits.

    Computed through the log-sum-exp form, so extreme logits stay stable.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("cross-entropy labels must be 0 or 1")
    shift = logits.max(axis=1, keepdims=True)
    logsum = shift.squeeze(1) + np.log(np.exp(logits - shift).sum(axis=1))
    loss = float((logsum - logits[np.arange(n), labels]).mean())
    softmax = np.exp(logits - logsum[:, None])
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), labels] = 1.0
    return loss, (softmax - onehot) / n


def _net_config(cfg: TrainConfig, input_dim: int) -> NetConfig:
    return NetConfig(
        input_dim=input_dim,
        hidden_dims=cfg.hidden_dims,
        output_mode="logits" if cfg.regime in ("offline", "online") else "embedding",
        use_attention=cfg.model == "mlp_attention",
        dropout_p=cfg.dropout_p,
        init_seed=derive_seed(cfg.seed, "init"),
    )


def _guard_finite(value: float, context: str):
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss in {context}; aborting run")


def _batches(n: int, batch_size: int, order=None):
    """Consecutive slices of the (optionally permuted) row order.

    A trailing batch of a single row is skipped: batch norm needs at
    least two rows in training mode.
    """
    if order is None:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        batch = order[start : start + batch_size]
        if len(batch) >= 2:
            yield batch


def train_offline(train: LabeledDataset, val: LabeledDataset, cfg: TrainConfig) -> RunResult:
    """Epoch-based cross-entropy training with seeded shuffling."""
    if cfg.regime != "offline":
        raise ValueError(f"train_offline called with regime {cfg.regime!r}")
    if train.n_rows == 0:
        raise ValueError("empty training set")
    started = time.perf_counter()
    net_cfg = _net_config(cfg, train.n_features)
    params = init_params(net_cfg)
    state = init_optimizer_state(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")

    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(train.n_rows)
        epoch_losses = []
        for batch in _batches(train.n_rows, cfg.batch_size, order):
            seed = int(dropout_rng.integers(1 << 63))
            logits, trace = forward(params, net_cfg, train.features[batch], "train", seed)
            loss, g_logits = cross_entropy_loss(logits, train.labels[batch])
            _guard_finite(loss, f"offline step {step}")
            adam_step(params, backward(trace, g_logits), state)
            epoch_losses.append(loss)
            step += 1
        val_logits, _ = forward(params, net_cfg, val.features, "eval")
        val_loss, _ = cross_entropy_loss(val_logits, val.labels)
        _guard_finite(val_loss, "offline validation")
        curve.append((step, float(np.mean(epoch_losses)), val_loss))

    return RunResult(
        regime=cfg.regime,
        model=cfg.model,
        seed=cfg.seed,
        loss_curve=curve,
        params=params,
        net_config=net_cfg,
        prototypes=None,
        wall_time=time.perf_counter() - started,
        train_config=cfg,
    )


def train_online(
    stream_source: LabeledDataset, cfg: TrainConfig, val: LabeledDataset | None = None
) -> RunResult:
    """Single-pass training over the stream in arrival order.

    Rows are never shuffled; each consecutive batch triggers one update,
    stopping at min(available batches, max_online_updates).  When a
    validation set is supplied its loss is recorded per update, otherwise
    the validation column is None.
    """
    if cfg.regime != "online":
        raise ValueError(f"train_online called with regime {cfg.regime!r}")
    if stream_source.n_rows == 0:
        raise ValueError("empty stream")
    started = time.perf_counter()
    net_cfg = _net_config(cfg, stream_source.n_features)
    params = init_params(net_cfg)
    state = init_optimizer_state(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    dropout_rng = substream(cfg.seed, "dropout")

    curve = []
    step = 0
    for batch in _batches(stream_source.n_rows, cfg.batch_size):
        if step >= cfg.max_online_updates:
            break
        seed = int(dropout_rng.integers(1 << 63))
        logits, trace = forward(
            params, net_cfg, stream_source.features[batch], "train", seed
        )
        loss, g_logits = cross_entropy_loss(logits, stream_source.labels[batch])
        _guard_finite(loss, f"online update {step}")
        adam_step(params, backward(trace, g_logits), state)
        step += 1
        val_loss = None
        if val is not None:
            val_logits, _ = forward(params, net_cfg, val.features, "eval")
            val_loss, _ = cross_entropy_loss(val_logits, val.labels)
            _guard_finite(val_loss, "online validation")
        curve.append((step, loss, val_loss))

    return RunResult(
        regime=cfg.regime,
        model=cfg.model,
        seed=cfg.seed,
        loss_curve=curve,
        params=params,
        net_config=net_cfg,
        prototypes=None,
        wall_time=time.perf_counter() - started,
        train_config=cfg,
    )


def _episode_eval_loss(params, net_cfg, episode, loss_kind, ds_cfg) -> float:
    """Per-query episodic loss with eval-mode embeddings (no gradients)."""
    x = np.vstack([episode.support_x, episode.query_x])
    emb, _ = forward(params, net_cfg, x, "eval")
    m = len(episode.support_y)
    loss, _, _ = episode_loss_and_grads(
        emb[:m], episode.support_y, emb[m:], episode.query_y, loss_kind, ds_cfg
    )
    return loss / len(episode.query_y)


def train_prototypical(
    train: LabeledDataset,
    val: LabeledDataset,
    cfg: TrainConfig,
    loss_kind: str | None = None,
) -> RunResult:
    """Episodic training with the traditional or dual-space loss.

    Each episode runs one training-mode forward over support + query,
    builds prototypes from the support embeddings, and backpropagates
    through both paths.  After the final epoch, prototypes are frozen
    from the full training split in eval mode.  Validation episodes are
    sampled once with a fixed seed and re-scored each epoch.
    """
    if loss_kind is None:
        loss_kind = "dspace" if cfg.regime == "dspace" else "proto"
    if loss_kind not in ("proto", "dspace"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if cfg.regime not in ("proto", "dspace"):
        raise ValueError(f"train_prototypical called with regime {cfg.regime!r}")
    counts = np.bincount(train.labels, minlength=2)
    if np.any(counts < cfg.k_support + 1):
        raise ValueError(
            f"class sizes {counts.tolist()} too small for k_support={cfg.k_support} "
            "plus at least one query row"
        )
    started = time.perf_counter()
    net_cfg = _net_config(cfg, train.n_features)
    params = init_params(net_cfg)
    state = init_optimizer_state(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    episode_rng = substream(cfg.seed, "episodes")
    dropout_rng = substream(cfg.seed, "dropout")
    val_rng = substream(cfg.seed, "val_episodes")
    val_episodes = [
        sample_episode(val, cfg.k_support, cfg.k_query, int(val_rng.integers(1 << 63)))
        for _ in range(cfg.episodes_per_epoch)
    ]

    curve = []
    step = 0
    for _ in range(cfg.epochs):
        epoch_losses = []
        for _ in range(cfg.episodes_per_epoch):
            episode = sample_episode(
                train, cfg.k_support, cfg.k_query, int(episode_rng.integers(1 << 63))
            )
            x = np.vstack([episode.support_x, episode.query_x])
            seed = int(dropout_rng.integers(1 << 63))
            emb, trace = forward(params, net_cfg, x, "train", seed)
            m = len(episode.support_y)
            loss, g_support, g_query = episode_loss_and_grads(
                emb[:m], episode.support_y, emb[m:], episode.query_y,
                loss_kind, cfg.dual_space,
            )
            _guard_finite(loss, f"{loss_kind} episode at step {step}")
            upstream = np.vstack([g_support, g_query])
            adam_step(params, backward(trace, upstream), state)
            epoch_losses.append(loss / len(episode.query_y))
            step += 1
        val_loss = float(
            np.mean([
                _episode_eval_loss(params, net_cfg, ep, loss_kind, cfg.dual_space)
                for ep in val_episodes
            ])
        )
        _guard_finite(val_loss, "episodic validation")
        curve.append((step, float(np.mean(epoch_losses)), val_loss))

    train_emb, _ = forward(params, net_cfg, train.features, "eval")
    protos = compute_prototypes(train_emb, train.labels)

    return RunResult(
        regime=cfg.regime,
        model=cfg.model,
        seed=cfg.seed,
        loss_curve=curve,
        params=params,
        net_config=net_cfg,
        prototypes=protos,
        wall_time=time.perf_counter() - started,
        train_config=cfg,
    )


def run_regime(
    train: LabeledDataset, val: LabeledDataset, cfg: TrainConfig
) -> RunResult:
    """Dispatch to the regime named in the config."""
    if cfg.regime == "offline":
        return train_offline(train, val, cfg)
    if cfg.regime == "online":
        return train_online(train, cfg, val)
    return train_prototypical(train, val, cfg)
