"""Binary wire format for state-update and model-update messages.

Layout (all little-endian):

    offset 0   1 byte   kind (1 = state-update, 2 = model-update)
    offset 1   uint32   n (state dimension)
    offset 5   uint32   q (input dimension)
    offset 9   uint64   step index (state-update) or model version (model-update)
    offset 17  float64[]  payload

State-update payload is the n state entries; model-update payload is the
closed-loop matrix (n*n, row-major), the input matrix (n*q) and the noise
covariance (n*n). Doubles survive the round trip bit-exactly, which is what
keeps sender and receiver predictions in lockstep after a reset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StateUpdate",
    "ModelUpdate",
    "WireError",
    "encode_message",
    "decode_message",
]

_HEADER = struct.Struct("<BIIQ")

KIND_STATE = 1
KIND_MODEL = 2


class WireError(ValueError):
    """Raised for malformed or truncated message buffers."""


@dataclass(frozen=True)
class StateUpdate:
    step: int
    x: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, StateUpdate)
            and self.step == other.step
            and np.array_equal(self.x, other.x)
        )


@dataclass(frozen=True)
class ModelUpdate:
    version: int
    a_cl: np.ndarray
    b: np.ndarray
    sigma: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, ModelUpdate)
            and self.version == other.version
            and np.array_equal(self.a_cl, other.a_cl)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.sigma, other.sigma)
        )


def encode_message(payload) -> bytes:
    """Serialize a StateUpdate or ModelUpdate to bytes."""
    if isinstance(payload, StateUpdate):
        x = np.ascontiguousarray(payload.x, dtype="<f8").reshape(-1)
        n = x.shape[0]
        return _HEADER.pack(KIND_STATE, n, 1, payload.step) + x.tobytes()
    if isinstance(payload, ModelUpdate):
        a = np.ascontiguousarray(payload.a_cl, dtype="<f8")
        b = np.ascontiguousarray(payload.b, dtype="<f8")
        s = np.ascontiguousarray(payload.sigma, dtype="<f8")
        n, q = b.shape
        if a.shape != (n, n) or s.shape != (n, n):
            raise WireError("model matrices have inconsistent shapes")
        body = a.tobytes() + b.tobytes() + s.tobytes()
        return _HEADER.pack(KIND_MODEL, n, q, payload.version) + body
    raise WireError(f"cannot encode payload of type {type(payload).__name__}")


def decode_message(buf: bytes):
    """Parse bytes back into a StateUpdate or ModelUpdate.

    Rejects unknown kind bytes, truncated buffers and trailing garbage.
    """
    if len(buf) < _HEADER.size:
        raise WireError(f"buffer too short for header ({len(buf)} bytes)")
    kind, n, q, tag = _HEADER.unpack_from(buf)
    if n < 1 or q < 1:
        raise WireError(f"invalid dimensions n={n}, q={q}")
    body = buf[_HEADER.size:]
    if kind == KIND_STATE:
        expected = 8 * n
        if len(body) != expected:
            raise WireError(f"state-update body must be {expected} bytes, got {len(body)}")
        x = np.frombuffer(body, dtype="<f8").astype(float)
        return StateUpdate(step=tag, x=x)
    if kind == KIND_MODEL:
        expected = 8 * (2 * n * n + n * q)
        if len(body) != expected:
            raise WireError(f"model-update body must be {expected} bytes, got {len(body)}")
        vals = np.frombuffer(body, dtype="<f8").astype(float)
        a = vals[: n * n].reshape(n, n)
        b = vals[n * n : n * n + n * q].reshape(n, q)
        s = vals[n * n + n * q :].reshape(n, n)
        return ModelUpdate(version=tag, a_cl=a, b=b, sigma=s)
    raise WireError(f"unknown message kind byte 0x{kind:02X}")
