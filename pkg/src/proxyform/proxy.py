"""Proxy attention, proxy bias, transform-generating blocks, and FLOPs accounting.

Proxy attention replaces the quadratic query-key product with two
softmax stages through a small set of proxy tokens: a compression stage
that aggregates values using proxies as queries, and a broadcast stage
that distributes the compressed values back to the original queries.
A Proxy Block wraps that attention with a learnable additive bias,
Q/K/V/proxy projections, residual connections, and a feedforward
network. Text-proxied stacks feed a translation head; image-proxied
stacks (pooled per view) feed a linear-transform head.

The FLOPs accountant is a closed-form model (multiply-accumulate
counted as 2 FLOPs) used to verify the linear-complexity and
overhead-reduction claims without measuring hardware.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterSet
from .geom import PointCloud
from .numerics import (LinearParams, attention, linear, relu, softmax_rows,
                       softmax_rows_vjp)
from .offsetnet import offset_features

VARIANTS = ("self", "cross", "proxy")


# ---------------------------------------------------------------------------
# proxy attention

def proxy_attention(q, k, v, p, scaled: bool = True):
    """Two-stage attention through proxy tokens.

    Compression uses the proxies as queries against the original keys
    and values; broadcast uses the original queries against the proxies
    and the compressed values. Equivalent to softmax(q p^T) softmax(p k^T) v
    without ever materializing an N x N weight matrix.
    """
    compressed = attention(p, k, v, scaled=scaled)
    return attention(q, p, compressed, scaled=scaled)


# ---------------------------------------------------------------------------
# proxy bias

def bias_dims(c: int) -> tuple[int, int]:
    """Side length S and coarse grid D of the bias construction for width c.

    Requires c = S^2 with integer S. D is the integer fourth root when
    c is a perfect fourth power (the exact low-parameter construction);
    otherwise D = isqrt(S), which degrades gracefully for square widths
    like 64 that are not fourth powers.
    """
    if c <= 0:
        raise ValueError(f"feature width must be positive, got {c}")
    s = math.isqrt(c)
    if s * s != c:
        raise ValueError(f"invalid config: feature width {c} is not a perfect square")
    d = round(c ** 0.25)
    if d ** 4 != c:
        d = max(1, math.isqrt(s))
    return s, d


def bias_params_per_row(c: int) -> int:
    """Learnable scalars per bias row: D^2 + 2S (accountant uses floor dims off-square)."""
    s = math.isqrt(c)
    d = round(c ** 0.25)
    if d ** 4 != c:
        d = max(1, math.isqrt(max(1, s)))
    return d * d + 2 * s


@dataclass
class ProxyBiasParams:
    """Low-dimensional parameter grids assembled into an (N, C) additive bias."""

    b_d: np.ndarray  # (N, D, D) dense coarse grid, bilinearly upsampled
    b_c: np.ndarray  # (N, 1, S) column subspace
    b_r: np.ndarray  # (N, S, 1) row subspace

    @property
    def n_rows(self) -> int:
        return self.b_d.shape[0]

    @property
    def width(self) -> int:
        return self.b_c.shape[2] ** 2

    def astype(self, dtype) -> "ProxyBiasParams":
        return ProxyBiasParams(self.b_d.astype(dtype), self.b_c.astype(dtype),
                               self.b_r.astype(dtype))


@dataclass
class ProxyBiasGrads:
    b_d: np.ndarray
    b_c: np.ndarray
    b_r: np.ndarray


def proxy_bias_init(seed, n_rows: int, c: int, scale: float = 0.02) -> ProxyBiasParams:
    s, d = bias_dims(c)
    rng = np.random.default_rng(seed)
    return ProxyBiasParams(
        b_d=rng.normal(0.0, scale, size=(n_rows, d, d)),
        b_c=rng.normal(0.0, scale, size=(n_rows, 1, s)),
        b_r=rng.normal(0.0, scale, size=(n_rows, s, 1)),
    )


def proxy_bias_zeros(n_rows: int, c: int) -> ProxyBiasParams:
    s, d = bias_dims(c)
    return ProxyBiasParams(np.zeros((n_rows, d, d)), np.zeros((n_rows, 1, s)),
                           np.zeros((n_rows, s, 1)))


def _interp_matrix(s: int, d: int, dtype=np.float64) -> np.ndarray:
    """(S, D) bilinear upsampling weights; rows sum to 1 (constants reproduce exactly)."""
    w = np.zeros((s, d), dtype=dtype)
    if d == 1:
        w[:, 0] = 1.0
        return w
    pos = np.arange(s) * (d - 1) / (s - 1) if s > 1 else np.zeros(1)
    i0 = np.minimum(pos.astype(np.int64), d - 2)
    frac = pos - i0
    w[np.arange(s), i0] = 1.0 - frac
    w[np.arange(s), i0 + 1] = frac
    return w


def proxy_bias(params: ProxyBiasParams) -> np.ndarray:
    """Assemble the (N, C) bias: upsampled dense grid plus row/column subspace sum."""
    n, d, _ = params.b_d.shape
    s = params.b_c.shape[2]
    w = _interp_matrix(s, d, dtype=params.b_d.dtype)
    b1 = np.einsum("sd,nde,te->nst", w, params.b_d, w)
    b2 = params.b_c + params.b_r
    return (b1 + b2).reshape(n, s * s)


def proxy_bias_vjp(params: ProxyBiasParams, g: np.ndarray) -> ProxyBiasGrads:
    """Pullback of proxy_bias for a cotangent g of shape (N, C)."""
    n, d, _ = params.b_d.shape
    s = params.b_c.shape[2]
    g2 = g.reshape(n, s, s)
    w = _interp_matrix(s, d, dtype=params.b_d.dtype)
    return ProxyBiasGrads(
        b_d=np.einsum("sd,nst,te->nde", w, g2, w),
        b_c=g2.sum(axis=1, keepdims=True),
        b_r=g2.sum(axis=2, keepdims=True),
    )


# ---------------------------------------------------------------------------
# cluster features and pooling

def pointnet_lite(params: LinearParams, cs: ClusterSet, cloud: PointCloud) -> np.ndarray:
    """Per-cluster features: pointwise linear + ReLU + max pool over member points."""
    feats = offset_features(cs, cloud).astype(params.weight.dtype)
    pre = feats @ params.weight
    if params.bias is not None:
        pre = pre + params.bias
    return np.maximum(pre, 0.0).max(axis=1)


def attention_pool(score: LinearParams, tokens: np.ndarray) -> np.ndarray:
    """Collapse a token set (T, C) to a single (1, C) row by score-softmax weighting.

    The scoring layer is a C -> 1 map; a score bias would cancel in the
    softmax, so configurations normally omit it.
    """
    tokens = np.asarray(tokens)
    if tokens.shape[0] == 0:
        raise ValueError("cannot pool an empty token group")
    logits = linear(tokens, score).reshape(1, -1)  # (1, T)
    weights = softmax_rows(logits)
    return weights @ tokens


def attention_pool_vjp(score: LinearParams, tokens: np.ndarray, g: np.ndarray):
    """Pullback of attention_pool: (d_tokens, d_weight, d_bias)."""
    logits = linear(tokens, score).reshape(1, -1)
    weights = softmax_rows(logits)
    g = g.reshape(1, -1)
    d_tokens = weights.T @ g
    d_weights = g @ tokens.T  # (1, T)
    d_logits = softmax_rows_vjp(weights, d_weights).reshape(-1, 1)
    d_tokens += d_logits @ score.weight.T
    dw = tokens.T @ d_logits
    db = d_logits.sum(axis=0) if score.bias is not None else None
    return d_tokens, dw, db


def pool_views(score: LinearParams, view_tokens) -> np.ndarray:
    """Stack one pooled row per view token set into a (V, C) proxy matrix."""
    return np.vstack([attention_pool(score, t) for t in view_tokens])


# ---------------------------------------------------------------------------
# proxy block

@dataclass
class ProxyBlockParams:
    """One block: Q/K/V/proxy projections, FFN, and the additive proxy bias."""

    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wp: LinearParams
    ffn1: LinearParams
    ffn2: LinearParams
    bias: ProxyBiasParams

    @property
    def width(self) -> int:
        return self.wq.in_dim

    def astype(self, dtype) -> "ProxyBlockParams":
        return ProxyBlockParams(self.wq.astype(dtype), self.wk.astype(dtype),
                                self.wv.astype(dtype), self.wp.astype(dtype),
                                self.ffn1.astype(dtype), self.ffn2.astype(dtype),
                                self.bias.astype(dtype))


@dataclass
class ProxyBlockGrads:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wp: np.ndarray
    ffn1_w: np.ndarray
    ffn1_b: np.ndarray
    ffn2_w: np.ndarray
    ffn2_b: np.ndarray
    bias: ProxyBiasGrads


def proxy_block_init(seed, c: int, bias_rows: int, ffn_mult: int = 4) -> ProxyBlockParams:
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(c)
    hidden = ffn_mult * c

    def proj():
        return LinearParams(rng.normal(0.0, std, size=(c, c)))

    return ProxyBlockParams(
        wq=proj(), wk=proj(), wv=proj(), wp=proj(),
        ffn1=LinearParams(rng.normal(0.0, std, size=(c, hidden)), np.zeros(hidden)),
        ffn2=LinearParams(rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, c)),
                          np.zeros(c)),
        bias=proxy_bias_init(rng, bias_rows, c),
    )


def stack_init(seed, layers: int, c: int, bias_rows: int,
               ffn_mult: int = 4) -> list[ProxyBlockParams]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [proxy_block_init(child, c, bias_rows, ffn_mult)
            for child in ss.spawn(layers)]


def _block_forward(params: ProxyBlockParams, f0, p0, scaled: bool):
    n, c = f0.shape
    if p0.shape[1] != c:
        raise ValueError(f"proxy width {p0.shape[1]} does not match features {c}")
    if params.bias.n_rows < n:
        raise ValueError(
            f"bias capacity {params.bias.n_rows} is smaller than sequence length {n}")
    scale = 1.0 / math.sqrt(c) if scaled else 1.0
    bias_full = proxy_bias(params.bias).astype(f0.dtype)
    f = f0 + bias_full[:n]
    q = f @ params.wq.weight
    k = f @ params.wk.weight
    v = f @ params.wv.weight
    p = p0 @ params.wp.weight
    s1 = softmax_rows((p @ k.T) * scale)
    compressed = s1 @ v
    s2 = softmax_rows((q @ p.T) * scale)
    attended = s2 @ compressed
    o1 = f + attended
    h1 = linear(o1, params.ffn1)
    r = relu(h1)
    out = o1 + linear(r, params.ffn2)
    cache = dict(scale=scale, f=f, q=q, k=k, v=v, p=p, s1=s1, compressed=compressed,
                 s2=s2, o1=o1, h1=h1, r=r)
    return out, cache


def proxy_block(params: ProxyBlockParams, f0, p0, scaled: bool = True):
    """Bias add, projections, proxy attention with residual, FFN with residual."""
    out, _ = _block_forward(params, f0, p0, scaled)
    return out


def proxy_block_backward(params: ProxyBlockParams, f0, p0, g, scaled: bool = True):
    """Gradients of <g, proxy_block(...)> for all parameters and both inputs."""
    _, cc = _block_forward(params, f0, p0, scaled)
    n = f0.shape[0]

    d_h2 = g
    d_r = d_h2 @ params.ffn2.weight.T
    d_wf2 = cc["r"].T @ d_h2
    d_bf2 = d_h2.sum(axis=0)
    d_h1 = d_r * (cc["h1"] > 0)
    d_wf1 = cc["o1"].T @ d_h1
    d_bf1 = d_h1.sum(axis=0)
    d_o1 = g + d_h1 @ params.ffn1.weight.T

    d_f = d_o1.copy()
    d_att = d_o1
    # broadcast stage
    d_s2 = d_att @ cc["compressed"].T
    d_compressed = cc["s2"].T @ d_att
    d_z2 = softmax_rows_vjp(cc["s2"], d_s2) * cc["scale"]
    d_q = d_z2 @ cc["p"]
    d_p = d_z2.T @ cc["q"]
    # compression stage
    d_s1 = d_compressed @ cc["v"].T
    d_v = cc["s1"].T @ d_compressed
    d_z1 = softmax_rows_vjp(cc["s1"], d_s1) * cc["scale"]
    d_p += d_z1 @ cc["k"]
    d_k = d_z1.T @ cc["p"]

    f = cc["f"]
    d_wq = f.T @ d_q
    d_wk = f.T @ d_k
    d_wv = f.T @ d_v
    d_f += d_q @ params.wq.weight.T
    d_f += d_k @ params.wk.weight.T
    d_f += d_v @ params.wv.weight.T
    d_wp = p0.T @ d_p
    d_p0 = d_p @ params.wp.weight.T

    g_bias = np.zeros((params.bias.n_rows, f0.shape[1]), dtype=d_f.dtype)
    g_bias[:n] = d_f
    bias_grads = proxy_bias_vjp(params.bias, g_bias)

    grads = ProxyBlockGrads(wq=d_wq, wk=d_wk, wv=d_wv, wp=d_wp,
                            ffn1_w=d_wf1, ffn1_b=d_bf1,
                            ffn2_w=d_wf2, ffn2_b=d_bf2, bias=bias_grads)
    return grads, d_f, d_p0


def stack_forward(blocks, f0, p, scaled: bool = True):
    """Apply blocks sequentially; an empty list is the identity."""
    f = f0
    for block in blocks:
        f = proxy_block(block, f, p, scaled=scaled)
    return f


# ---------------------------------------------------------------------------
# transform heads

@dataclass
class HeadParams:
    """Final fully connected layers emitting translations and linear transforms."""

    u_text: LinearParams  # C -> 3
    u_image: LinearParams  # C -> 9


def heads_init(seed, c: int, mode: str = "zero") -> HeadParams:
    if mode == "zero":
        return HeadParams(LinearParams(np.zeros((c, 3)), np.zeros(3)),
                          LinearParams(np.zeros((c, 9)), np.zeros(9)))
    if mode == "random":
        rng = np.random.default_rng(seed)
        return HeadParams(LinearParams(rng.normal(0.0, 0.02, size=(c, 3)), np.zeros(3)),
                          LinearParams(rng.normal(0.0, 0.02, size=(c, 9)), np.zeros(9)))
    raise ValueError(f"unknown head init mode {mode!r}")


def translation_head(f_final: np.ndarray, heads: HeadParams) -> np.ndarray:
    """Per-cluster translation vectors, shape (n, 3)."""
    return linear(f_final, heads.u_text)


def transform_head(f_final: np.ndarray, heads: HeadParams,
                   literal: bool = False) -> np.ndarray:
    """Per-cluster 3x3 transforms, shape (n, 3, 3).

    Default is the residual parametrization M = I + delta so zero heads
    yield the identity; ``literal=True`` emits delta itself (M = F U).
    """
    n = f_final.shape[0]
    delta = linear(f_final, heads.u_image).reshape(n, 3, 3)
    if literal:
        return delta
    return np.eye(3, dtype=delta.dtype) + delta


def head_vjp(f_final: np.ndarray, p: LinearParams, g: np.ndarray):
    """Shared pullback for both heads: returns (d_features, d_weight, d_bias)."""
    g2 = g.reshape(f_final.shape[0], -1)
    d_f = g2 @ p.weight.T
    dw = f_final.T @ g2
    db = g2.sum(axis=0) if p.bias is not None else None
    return d_f, dw, db


# ---------------------------------------------------------------------------
# FLOPs / parameter accounting

@dataclass
class FlopsReport:
    """Closed-form per-block and stack-total FLOPs and parameter counts.

    FLOPs count each multiply-accumulate as 2. ``projections`` includes
    the proxy-token projection, also exposed separately as
    ``proxy_projection`` because it does not scale with the sequence
    length. Totals are per-block values times ``layers``.
    """

    variant: str
    n_seq: int
    n_proxy: int
    c: int
    ffn_mult: int
    layers: int
    projections: int
    proxy_projection: int
    attention_core: int
    ffn: int
    bias_add: int
    params_projections: int
    params_ffn: int
    params_bias: int

    @property
    def per_block(self) -> int:
        return self.projections + self.attention_core + self.ffn + self.bias_add

    @property
    def total(self) -> int:
        return self.per_block * self.layers

    @property
    def params_per_block(self) -> int:
        return self.params_projections + self.params_ffn + self.params_bias

    @property
    def params_total(self) -> int:
        return self.params_per_block * self.layers

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dims": {"n_seq": self.n_seq, "n_proxy": self.n_proxy, "c": self.c,
                     "ffn_mult": self.ffn_mult, "layers": self.layers},
            "flops_per_block": {
                "projections": self.projections,
                "proxy_projection": self.proxy_projection,
                "attention_core": self.attention_core,
                "ffn": self.ffn,
                "bias_add": self.bias_add,
                "total": self.per_block,
            },
            "flops_total": self.total,
            "params_per_block": {
                "projections": self.params_projections,
                "ffn": self.params_ffn,
                "bias": self.params_bias,
                "total": self.params_per_block,
            },
            "params_total": self.params_total,
        }


def flops_count(n_seq: int, n_proxy: int, c: int, ffn_mult: int = 4,
                layers: int = 1, variant: str = "proxy") -> FlopsReport:
    """Analytic FLOPs for one attention-block stack.

    Per block: projections 8*n*C^2 (four C x C maps over the sequence),
    plus 2*p*C^2 for the proxy-token projection in the proxy variant;
    attention core 4*n^2*C (self), 4*n*p*C (cross), or 8*n*p*C (proxy:
    compression plus broadcast); FFN 4*mult*n*C^2; bias add n*C (proxy
    only). The proxy core is linear in n, the self core quadratic.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown attention variant {variant!r}")
    if min(n_seq, n_proxy, c, ffn_mult) <= 0 or layers < 0:
        raise ValueError("dimensions must be positive (layers nonnegative)")
    is_proxy = variant == "proxy"
    proxy_projection = 2 * n_proxy * c * c if is_proxy else 0
    if variant == "self":
        core = 4 * n_seq * n_seq * c
    elif variant == "cross":
        core = 4 * n_seq * n_proxy * c
    else:
        core = 8 * n_seq * n_proxy * c
    return FlopsReport(
        variant=variant, n_seq=n_seq, n_proxy=n_proxy, c=c,
        ffn_mult=ffn_mult, layers=layers,
        projections=8 * n_seq * c * c + proxy_projection,
        proxy_projection=proxy_projection,
        attention_core=core,
        ffn=4 * ffn_mult * n_seq * c * c,
        bias_add=n_seq * c if is_proxy else 0,
        params_projections=4 * c * c + (c * c if is_proxy else 0),
        params_ffn=2 * ffn_mult * c * c,
        params_bias=n_seq * bias_params_per_row(c) if is_proxy else 0,
    )


def param_count(n_seq: int, n_proxy: int, c: int, ffn_mult: int = 4,
                layers: int = 1, variant: str = "proxy") -> int:
    """Total learnable parameters of the stack under the accountant's conventions."""
    return flops_count(n_seq, n_proxy, c, ffn_mult, layers, variant).params_total
