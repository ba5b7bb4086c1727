"""Finite-difference verification of every hand-written backward pass.

Each check builds a small random instance, contracts the module output
with a fixed random cotangent to get a scalar loss, and compares the
analytic parameter gradients against central differences in float64.
"""

import numpy as np

from .cluster import build_clusters
from .numerics import LinearParams, flatten_arrays, grad_check
from .offsetnet import OffsetNetParams, offsetnet_backward, offsetnet_forward
from .proxy import (HeadParams, ProxyBiasParams, ProxyBlockParams,
                    attention_pool, attention_pool_vjp, head_vjp,
                    proxy_block, proxy_block_backward, transform_head,
                    translation_head)


def check_offset_net(seed: int, step: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(30, 3))
    centers = 0.5 * rng.normal(size=(4, 3))
    cs = build_clusters(centers, cloud, m=5)
    bound = 0.3  # small enough that some raw offsets hit the clamp
    cot = rng.normal(size=(4, 3))
    x0, unpack = flatten_arrays([rng.normal(0.0, 0.3, size=(6, 8)),
                                 rng.normal(0.0, 0.3, size=8),
                                 rng.normal(0.0, 0.3, size=(8, 3))])

    def f(vec):
        w1, b1, w2 = unpack(vec)
        params = OffsetNetParams(w1, b1, w2)
        out = offsetnet_forward(params, cs, cloud, bound)
        grads = offsetnet_backward(params, cs, cloud, bound, cot)
        gvec, _ = flatten_arrays([grads.w1, grads.b1, grads.w2])
        return float(np.sum(cot * out)), gvec

    return grad_check(f, x0, step)


def check_proxy_block(seed: int, step: float = 1e-5, scaled: bool = True) -> float:
    rng = np.random.default_rng(seed)
    # capacity equals the sequence length: surplus bias rows have exactly
    # zero gradients, which finite differences cannot resolve against the
    # 1e-8 error floor (their zeroing is unit-tested exactly instead)
    c, n, n_proxy, cap = 16, 5, 3, 5
    f0 = rng.normal(size=(n, c))
    p0 = rng.normal(size=(n_proxy, c))
    cot = rng.normal(size=(n, c))
    hidden = 2 * c
    arrays = [rng.normal(0.0, 0.3, size=(c, c)) for _ in range(4)]
    arrays += [rng.normal(0.0, 0.3, size=(c, hidden)), rng.normal(size=hidden),
               rng.normal(0.0, 0.3, size=(hidden, c)), rng.normal(size=c),
               rng.normal(size=(cap, 2, 2)), rng.normal(size=(cap, 1, 4)),
               rng.normal(size=(cap, 4, 1))]
    x0, unpack = flatten_arrays(arrays)

    def rebuild(vec):
        wq, wk, wv, wp, f1w, f1b, f2w, f2b, b_d, b_c, b_r = unpack(vec)
        return ProxyBlockParams(LinearParams(wq), LinearParams(wk), LinearParams(wv),
                                LinearParams(wp), LinearParams(f1w, f1b),
                                LinearParams(f2w, f2b),
                                ProxyBiasParams(b_d, b_c, b_r))

    def f(vec):
        params = rebuild(vec)
        out = proxy_block(params, f0, p0, scaled=scaled)
        grads, _, _ = proxy_block_backward(params, f0, p0, cot, scaled=scaled)
        gvec, _ = flatten_arrays([grads.wq, grads.wk, grads.wv, grads.wp,
                                  grads.ffn1_w, grads.ffn1_b, grads.ffn2_w,
                                  grads.ffn2_b, grads.bias.b_d, grads.bias.b_c,
                                  grads.bias.b_r])
        return float(np.sum(cot * out)), gvec

    return grad_check(f, x0, step)


def check_heads(seed: int, step: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    c, n = 8, 4
    f_final = rng.normal(size=(n, c))
    cot_t = rng.normal(size=(n, 3))
    cot_m = rng.normal(size=(n, 3, 3))
    x0, unpack = flatten_arrays([rng.normal(size=(c, 3)), rng.normal(size=3),
                                 rng.normal(size=(c, 9)), rng.normal(size=9)])

    def f(vec):
        tw, tb, iw, ib = unpack(vec)
        heads = HeadParams(LinearParams(tw, tb), LinearParams(iw, ib))
        value = float(np.sum(cot_t * translation_head(f_final, heads))
                      + np.sum(cot_m * transform_head(f_final, heads)))
        _, d_tw, d_tb = head_vjp(f_final, heads.u_text, cot_t)
        _, d_iw, d_ib = head_vjp(f_final, heads.u_image, cot_m)
        gvec, _ = flatten_arrays([d_tw, d_tb, d_iw, d_ib])
        return value, gvec

    return grad_check(f, x0, step)


def check_attention_pool(seed: int, step: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    c, t = 8, 6
    cot = rng.normal(size=(1, c))
    x0, unpack = flatten_arrays([rng.normal(size=(c, 1)), rng.normal(size=(t, c))])

    def f(vec):
        w, tokens = unpack(vec)
        score = LinearParams(w)
        out = attention_pool(score, tokens)
        d_tokens, dw, _ = attention_pool_vjp(score, tokens, cot)
        gvec, _ = flatten_arrays([dw, d_tokens])
        return float(np.sum(cot * out)), gvec

    return grad_check(f, x0, step)


CHECKS = {
    "offset_net": check_offset_net,
    "proxy_block": check_proxy_block,
    "heads": check_heads,
    "attention_pool": check_attention_pool,
}


def run_grad_checks(seed: int = 0, instances: int = 20) -> dict:
    """Worst relative error per component over ``instances`` random instances.

    Each check uses its own finite-difference step, chosen for the scale
    of its loss (roundoff grows as |f|/step, truncation as step^2).
    """
    results = {}
    for name, check in CHECKS.items():
        worst = 0.0
        for i in range(instances):
            worst = max(worst, check(seed + 1000 * i))
        results[name] = worst
    return results
