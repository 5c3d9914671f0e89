"""Embedding networks: a plain MLP and an attention-augmented MLP.

Everything runs in float64 numpy with hand-written reverse-mode
gradients, so analytic gradients can be checked against central finite
differences to tight tolerances.  The layer stack is

    [feature attention] -> (linear -> batchnorm -> ReLU -> dropout) * H
                        -> linear head (logits mode) | last activations
                           (embedding mode)

Training-mode forwards use batch statistics and update the running
estimates; eval-mode forwards use running statistics, disable dropout,
and mutate nothing.
"""

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .rng import substream


@dataclass
class NetConfig:
    input_dim: int
    hidden_dims: tuple = (64, 32)
    output_mode: str = "embedding"  # "embedding" | "logits"
    use_attention: bool = False
    dropout_p: float = 0.2
    batchnorm_momentum: float = 0.1
    batchnorm_eps: float = 1e-5
    attention_eps: float = 1e-9
    init_seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be non-empty positive counts")
        if self.output_mode not in ("embedding", "logits"):
            raise ValueError(f"unknown output_mode {self.output_mode!r}")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError("dropout_p must lie in [0, 1)")

    @property
    def embedding_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass
class LayerParams:
    weights: np.ndarray
    biases: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray


@dataclass
class ModelParams:
    layers: list
    attention: np.ndarray | None = None
    head_weights: np.ndarray | None = None
    head_biases: np.ndarray | None = None

    def trainable(self) -> dict:
        """Name -> array view of every trainable parameter.

        Running batch-norm statistics are deliberately absent: they are
        state, not parameters, and never receive gradient updates.
        """
        out = {}
        if self.attention is not None:
            out["attention"] = self.attention
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weights"] = layer.weights
            out[f"layer{i}.biases"] = layer.biases
            out[f"layer{i}.bn_gamma"] = layer.bn_gamma
            out[f"layer{i}.bn_beta"] = layer.bn_beta
        if self.head_weights is not None:
            out["head.weights"] = self.head_weights
            out["head.biases"] = self.head_biases
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[
                LayerParams(
                    l.weights.copy(),
                    l.biases.copy(),
                    l.bn_gamma.copy(),
                    l.bn_beta.copy(),
                    l.bn_running_mean.copy(),
                    l.bn_running_var.copy(),
                )
                for l in self.layers
            ],
            attention=None if self.attention is None else self.attention.copy(),
            head_weights=None if self.head_weights is None else self.head_weights.copy(),
            head_biases=None if self.head_biases is None else self.head_biases.copy(),
        )


@dataclass
class ForwardTrace:
    """Caches from a training-mode forward: everything backward needs."""

    params: ModelParams
    cfg: NetConfig
    attention: dict | None
    layers: list
    head_input: np.ndarray | None


@dataclass
class OptimizerState:
    """Adam accumulators plus hyperparameters (decoupled weight decay)."""

    m: dict
    v: dict
    step_count: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def expected_shapes(cfg: NetConfig) -> dict:
    """Shape of every parameter array implied by the config."""
    shapes = {}
    if cfg.use_attention:
        shapes["attention"] = (cfg.input_dim, cfg.input_dim)
    fan_in = cfg.input_dim
    for i, width in enumerate(cfg.hidden_dims):
        shapes[f"layer{i}.weights"] = (fan_in, width)
        for part in ("biases", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"):
            shapes[f"layer{i}.{part}"] = (width,)
        fan_in = width
    if cfg.output_mode == "logits":
        shapes["head.weights"] = (cfg.hidden_dims[-1], 2)
        shapes["head.biases"] = (2,)
    return shapes


def _kaiming_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: NetConfig) -> ModelParams:
    """Kaiming-uniform weights, zero biases, identity-ish batch norm.

    Draw order (attention, then layers, then head) is fixed so the same
    init_seed always yields bitwise-identical parameters.
    """
    rng = substream(cfg.init_seed, "init")
    attention = None
    if cfg.use_attention:
        attention = _kaiming_uniform(rng, cfg.input_dim, cfg.input_dim)
    layers = []
    fan_in = cfg.input_dim
    for width in cfg.hidden_dims:
        layers.append(
            LayerParams(
                weights=_kaiming_uniform(rng, fan_in, width),
                biases=np.zeros(width),
                bn_gamma=np.ones(width),
                bn_beta=np.zeros(width),
                bn_running_mean=np.zeros(width),
                bn_running_var=np.ones(width),
            )
        )
        fan_in = width
    head_w = head_b = None
    if cfg.output_mode == "logits":
        head_w = _kaiming_uniform(rng, cfg.hidden_dims[-1], 2)
        head_b = np.zeros(2)
    return ModelParams(layers=layers, attention=attention, head_weights=head_w, head_biases=head_b)


def _attention_parts(x: np.ndarray, w_att: np.ndarray, eps: float):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("attention input must be finite")
    proj = x @ w_att.T
    t = np.tanh(proj)
    e = np.exp(t)  # t in (-1, 1), no overflow possible
    attn = e / (e.sum(axis=1, keepdims=True) + eps)
    return x * attn, attn, t


def attention_forward(x: np.ndarray, w_att: np.ndarray, eps: float):
    """Per-sample feature attention.

    projection = W x, t = tanh(projection), attn = exp(t) / (sum over the
    sample's features of exp(t) + eps), weighted = x * attn elementwise.
    Returns (weighted, attn).
    """
    weighted, attn, _ = _attention_parts(x, w_att, eps)
    return weighted, attn


def forward(params: ModelParams, cfg: NetConfig, x, mode: str = "eval", rng_seed=None):
    """Run the network; returns (output, trace) with trace only in train mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input_dim {cfg.input_dim}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise ValueError("training-mode forward needs a batch of at least 2 (batch norm)")
    dropout_rng = None
    if train and cfg.dropout_p > 0:
        if rng_seed is None:
            raise ValueError("training-mode forward with dropout needs rng_seed")
        dropout_rng = substream(rng_seed, "dropout")

    att_cache = None
    a = x
    if cfg.use_attention:
        weighted, attn, t = _attention_parts(a, params.attention, cfg.attention_eps)
        if train:
            att_cache = {"x": a, "tanh_proj": t, "attn": attn}
        a = weighted

    layer_caches = []
    m = x.shape[0]
    for layer in params.layers:
        z = a @ layer.weights + layer.biases
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)  # biased, used for normalization
            inv_std = 1.0 / np.sqrt(var + cfg.batchnorm_eps)
            xhat = (z - mu) * inv_std
            mom = cfg.batchnorm_momentum
            layer.bn_running_mean *= 1.0 - mom
            layer.bn_running_mean += mom * mu
            layer.bn_running_var *= 1.0 - mom
            layer.bn_running_var += mom * var * m / (m - 1)  # unbiased running estimate
        else:
            inv_std = 1.0 / np.sqrt(layer.bn_running_var + cfg.batchnorm_eps)
            xhat = (z - layer.bn_running_mean) * inv_std
        y = layer.bn_gamma * xhat + layer.bn_beta
        r = np.maximum(y, 0.0)
        mask = None
        if train and cfg.dropout_p > 0:
            mask = dropout_rng.random(r.shape) >= cfg.dropout_p
            out = r * mask / (1.0 - cfg.dropout_p)
        else:
            out = r
        if train:
            layer_caches.append(
                {"a_in": a, "xhat": xhat, "inv_std": inv_std, "relu_mask": y > 0, "mask": mask}
            )
        a = out

    head_input = None
    if cfg.output_mode == "logits":
        head_input = a
        a = a @ params.head_weights + params.head_biases

    if not train:
        return a, None
    trace = ForwardTrace(
        params=params, cfg=cfg, attention=att_cache, layers=layer_caches, head_input=head_input
    )
    return a, trace


def backward(trace: ForwardTrace, upstream: np.ndarray) -> dict:
    """Exact reverse-mode gradients for every trainable parameter.

    upstream is dLoss/dOutput for the forward that produced the trace.
    Returns a dict keyed like ModelParams.trainable().
    """
    if trace is None:
        raise ValueError("backward needs the trace from a training-mode forward")
    params, cfg = trace.params, trace.cfg
    grads = {}
    g = np.asarray(upstream, dtype=np.float64)

    if cfg.output_mode == "logits":
        grads["head.weights"] = trace.head_input.T @ g
        grads["head.biases"] = g.sum(axis=0)
        g = g @ params.head_weights.T

    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        cache = trace.layers[i]
        if cache["mask"] is not None:
            g = g * cache["mask"] / (1.0 - cfg.dropout_p)
        g = g * cache["relu_mask"]
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        grads[f"layer{i}.bn_gamma"] = (g * xhat).sum(axis=0)
        grads[f"layer{i}.bn_beta"] = g.sum(axis=0)
        gxhat = g * layer.bn_gamma
        m = gxhat.shape[0]
        gz = (inv_std / m) * (
            m * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
        )
        grads[f"layer{i}.weights"] = cache["a_in"].T @ gz
        grads[f"layer{i}.biases"] = gz.sum(axis=0)
        g = gz @ layer.weights.T

    if cfg.use_attention:
        cache = trace.attention
        x, t, attn = cache["x"], cache["tanh_proj"], cache["attn"]
        g_attn = g * x
        g_x = g * attn
        # softmax-with-eps jacobian: exact because attn rows were divided
        # by (sum + eps), which the a_j * (g_j - sum_k g_k a_k) form absorbs
        g_t = attn * (g_attn - (g_attn * attn).sum(axis=1, keepdims=True))
        g_proj = g_t * (1.0 - t * t)
        grads["attention"] = g_proj.T @ x
        g = g_x + g_proj @ params.attention
    return grads


def init_optimizer_state(
    params: ModelParams, lr: float = 1e-3, weight_decay: float = 0.01
) -> OptimizerState:
    trainable = params.trainable()
    return OptimizerState(
        m={k: np.zeros_like(v) for k, v in trainable.items()},
        v={k: np.zeros_like(v) for k, v in trainable.items()},
        lr=lr,
        weight_decay=weight_decay,
    )


def _decayed(name: str) -> bool:
    # weight matrices only: not biases, not batch-norm affine params
    return name == "attention" or name.endswith("weights")


def adam_step(params: ModelParams, grads: dict, state: OptimizerState):
    """One Adam update with bias correction and decoupled weight decay.

    Parameter arrays and moments are updated in place; the decay term
    uses the pre-update parameter value (param -= lr * wd * param).
    """
    trainable = params.trainable()
    if set(grads) != set(trainable):
        raise ValueError("gradient keys do not match trainable parameters")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, param in trainable.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.adam_eps)
        if state.weight_decay != 0.0 and _decayed(name):
            step = step + state.lr * state.weight_decay * param
        param -= step
    return params, state


def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(doc["shape"])


def _all_arrays(params: ModelParams) -> dict:
    out = dict(params.trainable())
    for i, layer in enumerate(params.layers):
        out[f"layer{i}.bn_running_mean"] = layer.bn_running_mean
        out[f"layer{i}.bn_running_var"] = layer.bn_running_var
    return out


def model_to_json(params: ModelParams, cfg: NetConfig, state: OptimizerState | None = None) -> str:
    """Single JSON document: config, base64 float64 arrays, optional optimizer state."""
    doc = {
        "net_config": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "output_mode": cfg.output_mode,
            "use_attention": cfg.use_attention,
            "dropout_p": cfg.dropout_p,
            "batchnorm_momentum": cfg.batchnorm_momentum,
            "batchnorm_eps": cfg.batchnorm_eps,
            "attention_eps": cfg.attention_eps,
            "init_seed": cfg.init_seed,
        },
        "params": {name: _encode(arr) for name, arr in _all_arrays(params).items()},
    }
    if state is not None:
        doc["optimizer_state"] = {
            "m": {k: _encode(v) for k, v in state.m.items()},
            "v": {k: _encode(v) for k, v in state.v.items()},
            "step_count": state.step_count,
            "lr": state.lr,
            "weight_decay": state.weight_decay,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "adam_eps": state.adam_eps,
        }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text: str):
    """Inverse of model_to_json; validates array shapes against the config."""
    doc = json.loads(text)
    c = doc["net_config"]
    cfg = NetConfig(
        input_dim=c["input_dim"],
        hidden_dims=tuple(c["hidden_dims"]),
        output_mode=c["output_mode"],
        use_attention=c["use_attention"],
        dropout_p=c["dropout_p"],
        batchnorm_momentum=c["batchnorm_momentum"],
        batchnorm_eps=c["batchnorm_eps"],
        attention_eps=c["attention_eps"],
        init_seed=c["init_seed"],
    )
    shapes = expected_shapes(cfg)
    arrays = {}
    for name, enc in doc["params"].items():
        arr = _decode(enc)
        if name not in shapes:
            raise ValueError(f"unexpected parameter {name!r} for this config")
        if tuple(arr.shape) != shapes[name]:
            raise ValueError(f"shape {arr.shape} for {name!r}, expected {shapes[name]}")
        arrays[name] = arr
    missing = set(shapes) - set(arrays)
    if missing:
        raise ValueError(f"model document missing parameters: {sorted(missing)}")

    layers = []
    for i in range(len(cfg.hidden_dims)):
        layers.append(
            LayerParams(
                weights=arrays[f"layer{i}.weights"],
                biases=arrays[f"layer{i}.biases"],
                bn_gamma=arrays[f"layer{i}.bn_gamma"],
                bn_beta=arrays[f"layer{i}.bn_beta"],
                bn_running_mean=arrays[f"layer{i}.bn_running_mean"],
                bn_running_var=arrays[f"layer{i}.bn_running_var"],
            )
        )
        if np.any(layers[-1].bn_running_var <= 0):
            raise ValueError(f"layer{i} running variance must be positive")
    params = ModelParams(
        layers=layers,
        attention=arrays.get("attention"),
        head_weights=arrays.get("head.weights"),
        head_biases=arrays.get("head.biases"),
    )
    state = None
    if "optimizer_state" in doc:
        s = doc["optimizer_state"]
        state = OptimizerState(
            m={k: _decode(v) for k, v in s["m"].items()},
            v={k: _decode(v) for k, v in s["v"].items()},
            step_count=s["step_count"],
            lr=s["lr"],
            weight_decay=s["weight_decay"],
            beta1=s["beta1"],
            beta2=s["beta2"],
            adam_eps=s["adam_eps"],
        )
    return params, cfg, state
