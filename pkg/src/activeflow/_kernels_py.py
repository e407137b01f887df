"""Pure numpy implementations of the sampling kernels.

Every function here has a twin in ``_kernels.pyx`` using the same arithmetic
order, so both backends map identical uniforms to identical tokens.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``probs`` (unnormalised, nonnegative)."""
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    thr = u * cdf[..., -1]
    idx = np.sum(cdf <= thr[..., None], axis=-1)
    k = probs.shape[-1]
    over = idx >= k
    if np.any(over):
        # rounding pushed the threshold past the total: take the last positive slot
        last = k - 1 - np.argmax((probs[over] > 0.0)[..., ::-1], axis=-1)
        idx[over] = last
    return idx.astype(np.int64)


def euler_kernel(x: np.ndarray, post: np.ndarray, scale: float, n_slots: int) -> np.ndarray:
    """Rows of ``delta_x + scale * (post - delta_x)`` over all alphabet slots, unclamped."""
    n_data = post.shape[-1]
    k = np.zeros(post.shape[:-1] + (n_slots,), dtype=np.float64)
    k[..., :n_data] = scale * post
    own = np.take_along_axis(k, x[..., None], axis=-1)
    np.put_along_axis(k, x[..., None], own + (1.0 - scale), axis=-1)
    return k


def clamp_kernel(k: np.ndarray, tol: float) -> float:
    """Clamp to [0, 1] in place; return the largest negative excursion."""
    worst = float(-k.min()) if k.size else 0.0
    np.clip(k, 0.0, 1.0, out=k)
    return worst if worst > 0.0 else 0.0


def euler_sample(x: np.ndarray, post: np.ndarray, scale: float, u: np.ndarray,
                 n_slots: int, tol: float = 1e-8):
    """One Euler step for every position. Returns ``(x_next, worst_negative)``."""
    k = euler_kernel(x, post, scale, n_slots)
    worst = clamp_kernel(k, tol)
    if worst > tol:
        return x.copy(), worst
    return categorical(k, u), worst


def softmax_generate(w_tok: np.ndarray, w_time: np.ndarray, x0: np.ndarray,
                     times: np.ndarray, kappas: np.ndarray, scales: np.ndarray,
                     u: np.ndarray, u_final: np.ndarray, n_data: int, mask_id: int,
                     carry: bool, force_unmask: bool, t_final_feat: np.ndarray,
                     tol: float = 1e-8):
    """Full Euler trajectory for the linear-softmax denoiser.

    ``w_tok`` has shape ``(L, n_slots, L*n_data)`` (per position, per token
    contribution to every logit); ``w_time`` has shape ``(3, L*n_data)``.
    Logits are accumulated incrementally as tokens change.
    """
    n, L = x0.shape
    n_slots = w_tok.shape[1]
    x = x0.copy()
    base = np.zeros((n, L * n_data))
    for i in range(L):
        base += w_tok[i, x[:, i]]
    worst = 0.0
    for s in range(len(times)):
        t = times[s]
        tf = t * w_time[0] + (1.0 - t) * w_time[1] + kappas[s] * w_time[2]
        if carry:
            # masked slots leave with probability exactly `scale`; seen slots stay
            go = (x == mask_id) & (u[s] < scales[s])
            new = x.copy()
            if np.any(go):
                a, i = np.nonzero(go)
                z = base.reshape(n, L, n_data)[a, i] + tf.reshape(L, n_data)[i]
                e = np.exp(z - z.max(axis=-1, keepdims=True))
                new[a, i] = categorical(e, u[s][a, i] / scales[s])
        else:
            post = _softmax_rows(base + tf, n, L, n_data)
            k = euler_kernel(x, post, scales[s], n_slots)
            worst = max(worst, clamp_kernel(k, tol))
            if worst > tol:
                return x, worst
            new = categorical(k, u[s])
        _update_base(base, w_tok, x, new)
        x = new
    if force_unmask:
        tf = (t_final_feat[0] * w_time[0] + t_final_feat[1] * w_time[1]
              + t_final_feat[2] * w_time[2])
        z = (base + tf).reshape(n, L, n_data)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        draws = categorical(e, u_final)
        x = np.where(x == mask_id, draws, x)
    return x, worst


def _softmax_rows(logits, n, L, n_data):
    z = logits.reshape(n, L, n_data)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _update_base(base, w_tok, old, new):
    for i in range(old.shape[1]):
        ch = np.nonzero(old[:, i] != new[:, i])[0]
        if ch.size:
            base[ch] += w_tok[i, new[ch, i]] - w_tok[i, old[ch, i]]
