"""Flat binary checkpoints for denoisers and classifiers.

Layout (little endian): ``magic(4s) version(u16) kind(u16) L(u32) V(u32)
feature_dim(u32) flags(u32)`` followed by float64 payload in row-major order.
"""
from __future__ import annotations

import struct

import numpy as np

from .cpe import ClassProbabilityEstimator
from .denoiser import SoftmaxDenoiser, TabularDenoiser
from .errors import ConfigurationError
from .paths import Scheduler, Vocab

MAGIC = b"AFMC"
VERSION = 1
HEADER = struct.Struct("<4sHHIIII")
KIND_SOFTMAX, KIND_CPE, KIND_TABULAR = 1, 2, 3

# flag bits
F_MASK, F_QUADRATIC, F_CARRY, F_CONSTANT = 1, 2, 4, 8


def _pack(kind, L, V, dim, flags, payload) -> bytes:
    arr = np.ascontiguousarray(payload, dtype="<f8")
    return HEADER.pack(MAGIC, VERSION, kind, L, V, dim, flags) + arr.tobytes()


def dumps(model) -> bytes:
    if isinstance(model, SoftmaxDenoiser):
        flags = (F_MASK * model.vocab.has_mask | F_QUADRATIC * (model.scheduler.kind == "quadratic")
                 | F_CARRY * model.carry_unmasked)
        return _pack(KIND_SOFTMAX, model.length, model.vocab.size, model.feature_dim, flags,
                     model.weights)
    if isinstance(model, ClassProbabilityEstimator):
        if model.constant is not None:
            payload = np.concatenate([model.weights, [model.bias, model.constant]])
            flags = F_CONSTANT
        else:
            payload = np.concatenate([model.weights, [model.bias, 0.0]])
            flags = 0
        return _pack(KIND_CPE, model.length, model.vocab_size, len(model.weights), flags, payload)
    if isinstance(model, TabularDenoiser):
        payload = np.concatenate([model.table.ravel(), model.known.astype(np.float64)])
        return _pack(KIND_TABULAR, model.length, model.vocab.size, model.vocab.n_slots,
                     F_MASK, payload)
    raise ConfigurationError(f"cannot serialise {type(model).__name__}")


def _expect(data, n):
    if data.size != n:
        raise ConfigurationError(f"checkpoint payload has {data.size} values, expected {n}")


def loads(buf: bytes):
    if len(buf) < HEADER.size:
        raise ConfigurationError("checkpoint truncated inside the header")
    magic, version, kind, L, V, dim, flags = HEADER.unpack_from(buf)
    if magic != MAGIC or version != VERSION:
        raise ConfigurationError("not an activeflow checkpoint (bad magic or version)")
    if (len(buf) - HEADER.size) % 8:
        raise ConfigurationError("checkpoint payload is not a whole number of float64 values")
    data = np.frombuffer(buf, dtype="<f8", offset=HEADER.size).astype(np.float64)
    if kind == KIND_SOFTMAX:
        vocab = Vocab(V, bool(flags & F_MASK))
        sched = Scheduler("quadratic" if flags & F_QUADRATIC else "linear")
        _expect(data, dim * L * V)
        return SoftmaxDenoiser(vocab, L, sched, data.reshape(dim, L * V), bool(flags & F_CARRY))
    if kind == KIND_CPE:
        _expect(data, dim + 2)
        m = ClassProbabilityEstimator(L, V, data[:dim].copy(), float(data[dim]))
        if flags & F_CONSTANT:
            m.constant = float(data[dim + 1])
        return m
    if kind == KIND_TABULAR:
        vocab = Vocab(V, True)
        n_ctx = dim ** L
        _expect(data, n_ctx * L * V + n_ctx)
        table = data[: n_ctx * L * V].reshape(n_ctx, L, V)
        return TabularDenoiser(vocab, L, table, data[n_ctx * L * V:] > 0.5)
    raise ConfigurationError(f"unknown checkpoint kind {kind}")


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
