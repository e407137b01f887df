"""Procedural motif landscapes with a certified optimum, in the style of Ehrlich functions.

Score: -1 for sequences holding a mask token or a banned adjacent pair;
otherwise the mean over motifs of the quantised matched-prefix fraction.
Motifs occupy disjoint contiguous windows, so the optimum is constructible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class MotifLandscapeSpec:
    length: int
    vocab_size: int
    motifs: tuple  # ((offset, (tok, ...)), ...)
    quantization: int
    seed: int
    banned: tuple  # ((a, b), ...) forbidden adjacent pairs
    optimum: tuple

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "vocab_size": self.vocab_size,
            "quantization": self.quantization,
            "seed": self.seed,
            "motifs": [{"offset": o, "tokens": list(m)} for o, m in self.motifs],
            "banned": [list(p) for p in self.banned],
            "optimum": list(self.optimum),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotifLandscapeSpec":
        spec = cls(int(d["length"]), int(d["vocab_size"]),
                   tuple((int(m["offset"]), tuple(int(v) for v in m["tokens"])) for m in d["motifs"]),
                   int(d["quantization"]), int(d["seed"]),
                   tuple(tuple(int(v) for v in p) for p in d["banned"]),
                   tuple(int(v) for v in d["optimum"]))
        if evaluate(spec, np.array(spec.optimum)) != 1.0:
            raise ConfigurationError("landscape optimum does not score 1.0")
        return spec

    @property
    def x_star(self) -> np.ndarray:
        return np.array(self.optimum, dtype=np.int64)


def make_landscape(length: int = 12, vocab_size: int = 8, n_motifs: int = 3,
                   motif_length: int = 4, quantization: int = 4, seed: int = 0,
                   n_banned: int | None = None) -> MotifLandscapeSpec:
    if n_motifs * motif_length > length:
        raise ConfigurationError(
            f"{n_motifs} motifs of length {motif_length} do not fit in L={length}")
    if quantization < 1:
        raise ConfigurationError("quantization must be >= 1")
    rng = np.random.default_rng(seed)
    # random composition of the free positions into n_motifs + 1 gaps
    free = length - n_motifs * motif_length
    cuts = np.sort(rng.integers(0, free + 1, size=n_motifs))
    gaps = np.diff(np.concatenate([[0], cuts]))
    motifs, pos = [], 0
    for g in gaps:
        pos += int(g)
        motifs.append((pos, tuple(int(v) for v in rng.integers(0, vocab_size, motif_length))))
        pos += motif_length
    x = rng.integers(0, vocab_size, size=length)
    for off, toks in motifs:
        x[off:off + motif_length] = toks
    used = {(int(a), int(b)) for a, b in zip(x[:-1], x[1:])}
    candidates = [(a, b) for a in range(vocab_size) for b in range(vocab_size)
                  if (a, b) not in used and a != b]
    n_banned = vocab_size if n_banned is None else n_banned
    n_banned = min(n_banned, len(candidates))
    pick = rng.choice(len(candidates), size=n_banned, replace=False) if n_banned else []
    banned = tuple(sorted(candidates[i] for i in pick))
    spec = MotifLandscapeSpec(length, vocab_size, tuple(motifs), quantization, seed,
                              banned, tuple(int(v) for v in x))
    if evaluate(spec, spec.x_star) != 1.0:  # construction invariant
        raise ConfigurationError("optimum certification failed")
    return spec


def _banned_table(spec):
    tbl = np.zeros((spec.vocab_size + 1, spec.vocab_size + 1), bool)
    for a, b in spec.banned:
        tbl[a, b] = True
    return tbl


def evaluate(spec: MotifLandscapeSpec, x) -> np.ndarray | float:
    """Fitness of one sequence ``(L,)`` or a batch ``(n, L)``."""
    x = np.asarray(x, dtype=np.int64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.length:
        raise ShapeError(f"expected length {spec.length}, got {x.shape[1]}")
    invalid = np.any((x >= spec.vocab_size) | (x < 0), axis=1)
    xc = np.clip(x, 0, spec.vocab_size)
    if spec.banned and spec.length > 1:
        invalid |= np.any(_banned_table(spec)[xc[:, :-1], xc[:, 1:]], axis=1)
    if spec.motifs:
        q = spec.quantization
        levels = []
        for off, toks in spec.motifs:
            m = len(toks)
            hit = x[:, off:off + m] == np.array(toks)
            prefix = np.cumprod(hit, axis=1).sum(axis=1)
            levels.append(np.floor(prefix * q / m) / q)
        score = np.mean(levels, axis=0)
    else:
        score = np.ones(len(x))
    out = np.where(invalid, -1.0, score)
    return float(out[0]) if single else out


def observe(spec: MotifLandscapeSpec, x, sigma: float, rng: np.random.Generator):
    """Noisy measurement ``f(x) + N(0, sigma^2)``; exact when ``sigma == 0``."""
    if sigma < 0:
        raise ConfigurationError("noise level must be nonnegative")
    f = evaluate(spec, x)
    if sigma == 0:
        return f
    return f + sigma * rng.standard_normal(np.shape(f))


def valid_pool(spec: MotifLandscapeSpec, n: int, rng: np.random.Generator,
               exclude=None) -> np.ndarray:
    """``n`` distinct valid sequences by rejection sampling (at most ``100 n`` draws)."""
    out = np.empty((n, spec.length), dtype=np.int64)
    if n == 0:
        return out
    seen = set() if exclude is None else set(exclude)
    got, tries, cap = 0, 0, 100 * n
    while got < n:
        if tries >= cap:
            raise ConfigurationError(f"valid pool: {got}/{n} sequences after {cap} attempts")
        chunk = min(max(2 * (n - got), 16), cap - tries)
        cand = rng.integers(0, spec.vocab_size, size=(chunk, spec.length), dtype=np.int64)
        tries += chunk
        ok = evaluate(spec, cand) >= 0
        for row in cand[ok]:
            key = tuple(row.tolist())
            if key in seen:
                continue
            seen.add(key)
            out[got] = row
            got += 1
            if got == n:
                break
    return out
