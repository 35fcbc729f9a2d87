"""Keyed pseudorandom draws over canonically encoded inputs.

All randomness in a simulation comes from here: permitter responses are
keyed by the scenario's ``prf_key`` and delivery delays by the scheduler
key. A draw is a pure function of (key, inputs), so two worlds that feed
the same inputs get bit-identical uniforms regardless of what else they
contain. The byte layout is documented in ``docs/prf_encoding.md``.
"""
from __future__ import annotations

import hashlib
import struct
from typing import Any

import numpy as np

DOMAIN = b"poolsim-prf-v1"
_SCALE = 2.0 ** -53

_T_NONE, _T_BYTES, _T_STR, _T_INT, _T_FLOAT, _T_MAP, _T_SEQ = range(7)

_U32 = struct.Struct(">I").pack
_I64 = struct.Struct(">q").pack
_NONE = bytes((_T_NONE,)) + struct.pack(">I", 0)
_STR_TAG = bytes((_T_STR,))
_BYTES_TAG = bytes((_T_BYTES,))
_INT_HEAD = bytes((_T_INT,)) + struct.pack(">I", 8)


def _encode_one(value: Any, out: bytearray) -> None:
    t = type(value)
    if t is str:
        raw = value.encode("utf-8")
        out += _STR_TAG + _U32(len(raw)) + raw
    elif t is int:
        out += _INT_HEAD + _I64(value)
    elif t is bytes or t is bytearray:
        out += _BYTES_TAG + _U32(len(value)) + bytes(value)
    elif value is None:
        out += _NONE
    elif isinstance(value, bool):
        out += _INT_HEAD + _I64(int(value))
    elif isinstance(value, (int, np.integer)):
        out += _INT_HEAD + _I64(int(value))
    elif isinstance(value, (float, np.floating)):
        out += bytes((_T_FLOAT,)) + struct.pack(">Id", 8, float(value))
    elif isinstance(value, str):
        _encode_one(str(value), out)
    elif isinstance(value, (bytes, bytearray)):
        _encode_one(bytes(value), out)
    elif isinstance(value, dict):
        body = bytearray()
        for k in sorted(value, key=str):
            _encode_one(str(k), body)
            _encode_one(value[k], body)
        out += bytes((_T_MAP,)) + struct.pack(">II", len(body) + 4, len(value)) + body
    elif isinstance(value, (list, tuple)):
        body = bytearray()
        for item in value:
            _encode_one(item, body)
        out += bytes((_T_SEQ,)) + struct.pack(">II", len(body) + 4, len(value)) + body
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def encode_parts(*parts: Any) -> bytes:
    """Canonical, length-prefixed encoding of a tuple of inputs."""
    out = bytearray(struct.pack(">I", len(parts)))
    for p in parts:
        _encode_one(p, out)
    return bytes(out)


def _keyed(key: bytes) -> "hashlib._Hash":
    h = hashlib.shake_256(DOMAIN)
    h.update(struct.pack(">I", len(key)))
    h.update(key)
    return h


def words_to_uniform(words: np.ndarray) -> np.ndarray:
    return (words >> np.uint64(11)).astype(np.float64) * _SCALE


def prf_stream(key: bytes, parts: tuple, n: int) -> list[float]:
    """``n`` independent uniforms in [0, 1) for the given key and inputs."""
    h = _keyed(key)
    h.update(encode_parts(*parts))
    raw = h.digest(8 * n)
    return [(w >> 11) * _SCALE for w in struct.unpack(f">{n}Q", raw)]


def prf_uniform(key: bytes, *parts: Any) -> float:
    return prf_stream(key, parts, 1)[0]


class PrfPrefix:
    """A keyed hasher with a fixed leading block of inputs.

    ``prefix.stream(extra, n)`` equals ``prf_stream(key, prefix_parts + extra, n)``
    only in the sense of being a fixed function of both; the encoding is
    ``encode_parts(*prefix) || encode_parts(*extra)``.
    """

    def __init__(self, key: bytes, *parts: Any):
        self._h = _keyed(key)
        self._h.update(encode_parts(*parts))

    def raw(self, extra: tuple, nbytes: int) -> bytes:
        h = self._h.copy()
        h.update(encode_parts(*extra))
        return h.digest(nbytes)

    def stream(self, extra: tuple, n: int) -> list[float]:
        raw = self.raw(extra, 8 * n)
        return [(w >> 11) * _SCALE for w in struct.unpack(f">{n}Q", raw)]


def derive_key(seed: int, label: str) -> bytes:
    """32-byte key for a labelled integer seed."""
    return hashlib.blake2b(encode_parts(label, int(seed)), digest_size=32).digest()


def digest(*parts: Any) -> bytes:
    """Unkeyed 32-byte digest of canonically encoded parts."""
    return hashlib.blake2b(encode_parts(*parts), digest_size=32).digest()
