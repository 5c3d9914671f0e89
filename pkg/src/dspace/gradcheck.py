"""Finite-difference verification of every analytic gradient path.

For both architectures and all three losses (cross-entropy, traditional
prototypical, dual-space), every trainable scalar parameter is perturbed
by +/- h and the central difference is compared against the analytic
gradient.  Dropout masks are pinned by the forward seed, so the loss is
a smooth deterministic function of the parameters wherever no ReLU input
sits within h of zero.
"""

from dataclasses import dataclass

import numpy as np

from .fewshot import DualSpaceConfig, episode_loss_and_grads
from .network import NetConfig, backward, forward, init_params
from .rng import standard_normals, substream
from .training import cross_entropy_loss


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_params: int


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero gradients from inflating the ratio beyond
    what finite differences can certify.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _finite_difference(loss_fn, params, h: float = 1e-5) -> dict:
    grads = {}
    for name, array in params.trainable().items():
        grad = np.zeros_like(array)
        flat = array.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn(params)
            flat[i] = original - h
            minus = loss_fn(params)
            flat[i] = original
            grad_flat[i] = (plus - minus) / (2.0 * h)
        grads[name] = grad
    return grads


def _compare(analytic: dict, numeric: dict):
    worst = 0.0
    count = 0
    for name in analytic:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        for ai, ni in zip(a, n):
            worst = max(worst, relative_error(ai, ni))
            count += 1
    return worst, count


def _check_cross_entropy(use_attention: bool, seed: int) -> CheckResult:
    rng = substream(seed, "gradcheck-ce")
    cfg = NetConfig(
        input_dim=6, hidden_dims=(5, 4), output_mode="logits",
        use_attention=use_attention, dropout_p=0.2, init_seed=seed,
    )
    x = standard_normals(rng, (8, 6))
    y = rng.integers(0, 2, size=8)
    forward_seed = int(rng.integers(1 << 63))

    def loss_fn(p):
        logits, _ = forward(p, cfg, x, "train", forward_seed)
        loss, _ = cross_entropy_loss(logits, y)
        return loss

    params = init_params(cfg)
    logits, trace = forward(params, cfg, x, "train", forward_seed)
    _, g_logits = cross_entropy_loss(logits, y)
    analytic = backward(trace, g_logits)
    numeric = _finite_difference(loss_fn, params)
    worst, count = _compare(analytic, numeric)
    arch = "mlp_attention" if use_attention else "mlp"
    return CheckResult(f"cross_entropy/{arch}", worst, count)


def _check_episodic(loss_kind: str, use_attention: bool, seed: int) -> CheckResult:
    rng = substream(seed, "gradcheck-episodic")
    cfg = NetConfig(
        input_dim=6, hidden_dims=(5, 4), output_mode="embedding",
        use_attention=use_attention, dropout_p=0.2, init_seed=seed,
    )
    k_support, k_query = 3, 5
    support_y = np.repeat([0, 1], k_support)
    query_y = np.repeat([0, 1], k_query)
    x = standard_normals(rng, (len(support_y) + len(query_y), 6))
    ds_cfg = DualSpaceConfig(alpha=0.5)
    forward_seed = int(rng.integers(1 << 63))
    m = len(support_y)

    def loss_fn(p):
        emb, _ = forward(p, cfg, x, "train", forward_seed)
        loss, _, _ = episode_loss_and_grads(
            emb[:m], support_y, emb[m:], query_y, loss_kind, ds_cfg
        )
        return loss

    params = init_params(cfg)
    emb, trace = forward(params, cfg, x, "train", forward_seed)
    _, g_support, g_query = episode_loss_and_grads(
        emb[:m], support_y, emb[m:], query_y, loss_kind, ds_cfg
    )
    analytic = backward(trace, np.vstack([g_support, g_query]))
    numeric = _finite_difference(loss_fn, params)
    worst, count = _compare(analytic, numeric)
    arch = "mlp_attention" if use_attention else "mlp"
    return CheckResult(f"{loss_kind}/{arch}", worst, count)


def run_gradient_checks(seed: int = 20240517) -> list:
    """All six (loss, architecture) scenarios; returns their CheckResults."""
    results = []
    for use_attention in (False, True):
        results.append(_check_cross_entropy(use_attention, seed))
        for loss_kind in ("proto", "dspace"):
            results.append(_check_episodic(loss_kind, use_attention, seed))
    return results
