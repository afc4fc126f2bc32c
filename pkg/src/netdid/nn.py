"""Minimal differentiable building blocks for the bridge-function networks.

One principal-neighborhood-aggregation message-passing layer (mean and sum
aggregators crossed with identity/amplification/attenuation degree scalers),
dense MLP heads fused late with the unit's negative control, exact
reverse-mode gradients over the fixed compute graph, and an Adam optimizer.
No external ML runtime.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .graph import NetworkGraph


def standardize_columns(X) -> np.ndarray:
    """Per-column z-score; constant columns are left centered at zero."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {where}")


@dataclass(frozen=True)
class PnaGraphContext:
    """Graph-side quantities shared by every PNA layer evaluation."""

    Af: np.ndarray        # float64 adjacency
    deg: np.ndarray       # float64 degrees
    amp: np.ndarray       # log(1+deg)/log_deg_norm, 1 for isolated units
    att: np.ndarray       # log_deg_norm/log(1+deg), 1 for isolated units
    log_deg_norm: float

    @classmethod
    def from_graph(cls, g: NetworkGraph) -> "PnaGraphContext":
        deg = g.degrees.astype(np.float64)
        log_deg = np.log1p(deg)
        norm = float(log_deg.mean())
        pos = deg > 0
        amp = np.ones_like(deg)
        att = np.ones_like(deg)
        if pos.any():
            amp[pos] = log_deg[pos] / norm
            att[pos] = norm / log_deg[pos]
        return cls(
            Af=g.adjacency.astype(np.float64),
            deg=deg,
            amp=amp,
            att=att,
            log_deg_norm=norm,
        )


def pna_blocks(ctx: PnaGraphContext, H: np.ndarray) -> np.ndarray:
    """Concatenate the self row with the six scaled neighbor aggregates.

    Layout per unit: [self, mean, mean*amp, mean*att, sum, sum*amp, sum*att].
    """
    S = ctx.Af @ H
    M = np.divide(S, ctx.deg[:, None], out=np.zeros_like(S), where=ctx.deg[:, None] > 0)
    a = ctx.amp[:, None]
    t = ctx.att[:, None]
    return np.hstack([H, M, M * a, M * t, S, S * a, S * t])


def pna_blocks_backward(ctx: PnaGraphContext, d_blocks: np.ndarray) -> np.ndarray:
    """Gradient of the block construction with respect to the input rows."""
    di = d_blocks.shape[1] // 7
    c = [d_blocks[:, k * di : (k + 1) * di] for k in range(7)]
    a = ctx.amp[:, None]
    t = ctx.att[:, None]
    dM = c[1] + a * c[2] + t * c[3]
    dS = c[4] + a * c[5] + t * c[6]
    deg = ctx.deg[:, None]
    dS_total = dS + np.divide(dM, deg, out=np.zeros_like(dM), where=deg > 0)
    return c[0] + ctx.Af @ dS_total


class PnaLayer:
    """One message-passing layer: scaled aggregator blocks -> dense map."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.param_shapes = [(7 * in_dim, out_dim), (out_dim,)]
        self.n_params = 7 * in_dim * out_dim + out_dim

    def forward(self, views, blocks):
        W, b = views
        return blocks @ W + b

    def backward(self, views, blocks, d_out):
        W, _ = views
        dW = blocks.T @ d_out
        db = d_out.sum(axis=0)
        d_blocks = d_out @ W.T
        return [dW, db], d_blocks


class Mlp:
    """Dense network; rectifier on hidden layers, identity on the output."""

    def __init__(self, sizes):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.param_shapes = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.param_shapes.extend([(a, b), (b,)])
        self.n_params = sum(int(np.prod(s)) for s in self.param_shapes)

    def forward(self, views, inp, want_cache=False):
        cache = [inp]
        h = inp
        L = len(self.sizes) - 1
        for layer in range(L):
            W, b = views[2 * layer], views[2 * layer + 1]
            z = h @ W + b
            if layer < L - 1:
                h = relu(z)
                cache.extend([z, h])
            else:
                h = z
        return (h, cache) if want_cache else h

    def backward(self, views, cache, d_out):
        L = len(self.sizes) - 1
        grads = [None] * (2 * L)
        d = d_out
        for layer in reversed(range(L)):
            W = views[2 * layer]
            h_in = cache[2 * layer]
            grads[2 * layer] = h_in.T @ d
            grads[2 * layer + 1] = d.sum(axis=0)
            d = d @ W.T
            if layer > 0:
                z_prev = cache[2 * layer - 1]
                d = d * (z_prev > 0)
        return grads, d


def _param_views(theta, shapes):
    views = []
    off = 0
    for s in shapes:
        size = int(np.prod(s))
        views.append(theta[off : off + size].reshape(s))
        off += size
    return views, off


class BridgeNet:
    """Late-fusion bridge networks sharing one network embedding.

    A stack of ``depth`` PNA layers maps the covariate matrix to a per-unit
    embedding; two MLP heads consume [negative control, embedding] and emit
    the scalar outcome-bridge and treatment-bridge values. All parameters
    live in one flat vector.
    """

    def __init__(self, in_dim, embed_dim=16, hidden_dim=16, depth=1, positive_q=False):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.in_dim = in_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.depth = depth
        self.positive_q = positive_q
        self.embed_layers = []
        d = in_dim
        for _ in range(depth):
            self.embed_layers.append(PnaLayer(d, embed_dim))
            d = embed_dim
        self.feat_dim = d
        head_sizes = [1 + self.feat_dim] + ([hidden_dim] if hidden_dim else []) + [1]
        self.head_h = Mlp(head_sizes)
        self.head_q = Mlp(head_sizes)
        self.param_shapes = []
        for layer in self.embed_layers:
            self.param_shapes.extend(layer.param_shapes)
        self.param_shapes.extend(self.head_h.param_shapes)
        self.param_shapes.extend(self.head_q.param_shapes)
        self.n_params = sum(int(np.prod(s)) for s in self.param_shapes)

    def _split_views(self, theta):
        views, off = _param_views(theta, self.param_shapes)
        if off != theta.shape[0]:
            raise ValueError(
                f"parameter vector has length {theta.shape[0]}, expected {self.n_params}"
            )
        k = 0
        embed_views = []
        for layer in self.embed_layers:
            m = len(layer.param_shapes)
            embed_views.append(views[k : k + m])
            k += m
        mh = len(self.head_h.param_shapes)
        return embed_views, views[k : k + mh], views[k + mh :]

    def config(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "depth": self.depth,
            "positive_q": self.positive_q,
        }

    def embed(self, theta, features, ctx, want_cache=False, first_blocks=None):
        embed_views, _, _ = self._split_views(theta)
        H = features
        caches = []
        for idx, (layer, views) in enumerate(zip(self.embed_layers, embed_views)):
            blocks = (
                first_blocks
                if (idx == 0 and first_blocks is not None)
                else pna_blocks(ctx, H)
            )
            pre = layer.forward(views, blocks)
            _check_finite(pre, f"embedding layer {idx}")
            out = relu(pre) if idx < len(self.embed_layers) - 1 else pre
            caches.append((blocks, pre))
            H = out
        return (H, caches) if want_cache else H

    def forward(self, theta, features, ctx, w, z, want_cache=False, first_blocks=None):
        """Per-unit bridge values h(w_i, f_i) and q(z_i, f_i)."""
        embed_out = self.embed(theta, features, ctx, want_cache=True, first_blocks=first_blocks)
        F, embed_caches = embed_out
        _, h_views, q_views = self._split_views(theta)
        inp_h = np.column_stack([w, F])
        inp_q = np.column_stack([z, F])
        h_pre, cache_h = self.head_h.forward(h_views, inp_h, want_cache=True)
        q_pre, cache_q = self.head_q.forward(q_views, inp_q, want_cache=True)
        h_vals = h_pre[:, 0]
        q_raw = q_pre[:, 0]
        q_vals = softplus(q_raw) if self.positive_q else q_raw
        _check_finite(h_vals, "outcome-bridge head")
        _check_finite(q_vals, "treatment-bridge head")
        if not want_cache:
            return h_vals, q_vals
        cache = {
            "embed": embed_caches,
            "F": F,
            "inp_h": inp_h,
            "inp_q": inp_q,
            "cache_h": cache_h,
            "cache_q": cache_q,
            "q_raw": q_raw,
        }
        return h_vals, q_vals, cache

    def backward(self, theta, ctx, cache, d_h, d_q):
        """Flat gradient from per-unit output gradients d_h, d_q."""
        embed_views, h_views, q_views = self._split_views(theta)
        d_h2 = np.asarray(d_h, dtype=np.float64)[:, None]
        if self.positive_q:
            d_q = np.asarray(d_q, dtype=np.float64) * _sigmoid(cache["q_raw"])
        d_q2 = np.asarray(d_q, dtype=np.float64)[:, None]

        grads_h, d_inp_h = self.head_h.backward(h_views, cache["cache_h"], d_h2)
        grads_q, d_inp_q = self.head_q.backward(q_views, cache["cache_q"], d_q2)
        d_F = d_inp_h[:, 1:] + d_inp_q[:, 1:]

        embed_grads = []
        for idx in reversed(range(len(self.embed_layers))):
            layer = self.embed_layers[idx]
            blocks, pre = cache["embed"][idx]
            d_pre = d_F if idx == len(self.embed_layers) - 1 else d_F * (pre > 0)
            g, d_blocks = layer.backward(embed_views[idx], blocks, d_pre)
            embed_grads = g + embed_grads
            if idx > 0:
                d_F = pna_blocks_backward(ctx, d_blocks)

        flat = [a.ravel() for a in embed_grads + grads_h + grads_q]
        return np.concatenate(flat) if flat else np.zeros(0)

    def value_and_grad(self, theta, features, ctx, w, z, loss_fn, first_blocks=None):
        """Evaluate a scalar functional of the outputs and its exact gradient.

        loss_fn maps (h_vals, q_vals) to (value, d_h, d_q).
        """
        h_vals, q_vals, cache = self.forward(
            theta, features, ctx, w, z, want_cache=True, first_blocks=first_blocks
        )
        value, d_h, d_q = loss_fn(h_vals, q_vals)
        if not np.isfinite(value):
            raise NumericError("objective is not finite at the current parameters")
        grad = self.backward(theta, ctx, cache, d_h, d_q)
        return value, grad


def pna_forward(layer: PnaLayer, params: np.ndarray, H, g: NetworkGraph) -> np.ndarray:
    """Evaluate one PNA layer on raw node features.

    params is the layer's flat parameter slice (dense-map weights then bias).
    """
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] != g.n:
        raise ValueError(f"feature matrix has {H.shape[0]} rows but the graph has {g.n}")
    if H.shape[1] != layer.in_dim:
        raise ValueError(f"expected {layer.in_dim} feature columns, got {H.shape[1]}")
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (layer.n_params,):
        raise ValueError(f"layer takes {layer.n_params} parameters, got {params.shape}")
    views, _ = _param_views(params, layer.param_shapes)
    ctx = PnaGraphContext.from_graph(g)
    return layer.forward(views, pna_blocks(ctx, H))


def gradient(net: BridgeNet, theta, features, g: NetworkGraph, w, z, loss_fn) -> np.ndarray:
    """Exact reverse-mode gradient of a scalar functional of the outputs.

    loss_fn maps (h_vals, q_vals) to (value, d_h, d_q); the value itself is
    available from value_and_grad.
    """
    ctx = PnaGraphContext.from_graph(g)
    _, grad = net.value_and_grad(theta, features, ctx, w, z, loss_fn)
    return grad


def init_params(net: BridgeNet, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    parts = []
    for shape in net.param_shapes:
        if len(shape) == 2:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        else:
            parts.append(np.zeros(int(np.prod(shape))))
    return np.concatenate(parts)


def bridge_forward(net: BridgeNet, ds, g: NetworkGraph, theta):
    """Bridge values on a dataset: standardized covariates in, (h, q) out."""
    features = standardize_columns(ds.X)
    ctx = PnaGraphContext.from_graph(g)
    return net.forward(theta, features, ctx, ds.W, ds.Z)


class AdamState:
    """Adam optimizer state over a flat parameter vector."""

    def __init__(self, n_params, learning_rate=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; advances the state, returns new params."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad and optimizer state must have equal lengths")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def save_params(path, net: BridgeNet, params: np.ndarray, seed=None, epochs=None):
    """Flat float64 vector with a one-line JSON header."""
    header = {"architecture": net.config(), "seed": seed, "epochs": epochs,
              "n_params": int(params.shape[0])}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_params(path):
    """Inverse of save_params; returns (header dict, parameter vector)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        params = np.frombuffer(fh.read(), dtype="<f8").copy()
    if params.shape[0] != header["n_params"]:
        raise ValueError(
            f"parameter file holds {params.shape[0]} values, header says {header['n_params']}"
        )
    return header, params
