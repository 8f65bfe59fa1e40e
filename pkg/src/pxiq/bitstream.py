"""Lossless range coding of rounded latents against frozen CDF tables.

The coder is a carry-less renormalizing range coder with 64-bit state
(byte-wise renormalization, Subbotin style).  Probability tables hold
per-channel counts quantized to a 16-bit total; integers outside the
table support are escape-coded with an explicit sign and a 32-bit
magnitude.

File layout (little-endian throughout):
  magic "PXIQ" | u16 version | 32-byte manifest hash |
  u32 x 4 latent shape | u32 x 2 original image size | u16 table count |
  per table: i32 v_min | i32 v_max | u32 x (v_max - v_min + 2) counts |
  payload bytes
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codec import FactorizedEntropyModel

__all__ = [
    "BitstreamError",
    "CdfTable",
    "build_cdf_tables",
    "encode",
    "decode",
    "decoded_header",
    "MAGIC",
    "FORMAT_VERSION",
    "TOTAL_FREQ",
]

MAGIC = b"PXIQ"
FORMAT_VERSION = 1
PRECISION = 16
TOTAL_FREQ = 1 << PRECISION

_MASK = (1 << 64) - 1
_TOP = 1 << 56
_BOT = 1 << 48


class BitstreamError(Exception):
    pass


@dataclass
class CdfTable:
    """Quantized per-channel symbol masses; the last slot is the escape."""

    v_min: int
    v_max: int
    counts: np.ndarray  # uint32, length (v_max - v_min + 1) + 1

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.uint32)
        expected = self.v_max - self.v_min + 2
        if counts.shape != (expected,):
            raise BitstreamError(
                f"table for support [{self.v_min}, {self.v_max}] needs {expected} counts, "
                f"got shape {counts.shape}")
        if int(counts.sum()) != TOTAL_FREQ:
            raise BitstreamError(f"table counts must sum to {TOTAL_FREQ}, got {int(counts.sum())}")
        if np.any(counts == 0):
            raise BitstreamError("every table symbol needs mass >= 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "cum", np.concatenate([[0], np.cumsum(counts)]).astype(np.uint64))

    @property
    def escape_index(self) -> int:
        return self.v_max - self.v_min + 1


def _quantize_pmf(pmf: np.ndarray, escape_mass: float) -> np.ndarray:
    """Largest-remainder quantization of [pmf..., escape] to TOTAL_FREQ counts."""
    masses = np.concatenate([pmf, [max(escape_mass, 0.0)]])
    masses = masses / masses.sum()
    scaled = masses * TOTAL_FREQ
    counts = np.floor(scaled).astype(np.int64)
    counts = np.maximum(counts, 1)
    excess = int(counts.sum()) - TOTAL_FREQ
    if excess > 0:
        # remove from the largest entries, never below 1
        order = np.argsort(-counts, kind="stable")
        i = 0
        while excess > 0:
            j = order[i % len(order)]
            if counts[j] > 1:
                counts[j] -= 1
                excess -= 1
            i += 1
    elif excess < 0:
        remainders = scaled - np.floor(scaled)
        order = np.argsort(-remainders, kind="stable")
        for k in range(-excess):
            counts[order[k % len(order)]] += 1
    return counts.astype(np.uint32)


def build_cdf_tables(model: FactorizedEntropyModel, tail_mass: float = 1e-4,
                     max_support: int = 1 << 14) -> list[CdfTable]:
    """Discretize each channel's density so the omitted tail is < tail_mass."""
    if not 0.0 < tail_mass < 0.01:
        raise BitstreamError(f"tail_mass must lie in (0, 0.01), got {tail_mass}")
    half = tail_mass / 2.0
    bound = 8
    while True:
        edges = np.full((model.channels, 2), [-bound - 0.5, bound + 0.5], dtype=np.float64)
        c = model.cdf_numpy(edges)
        if np.all(c[:, 0] <= half) and np.all(1.0 - c[:, 1] <= half):
            break
        bound *= 2
        if bound > max_support:
            raise BitstreamError(f"support search exceeded {max_support} (tails too heavy)")

    symbols = np.arange(-bound, bound + 1, dtype=np.float64)
    grid = np.tile(symbols, (model.channels, 1))
    upper = model.cdf_numpy(grid + 0.5)
    lower = model.cdf_numpy(grid - 0.5)
    tables = []
    for ch in range(model.channels):
        lo_cdf, hi_cdf = lower[ch], upper[ch]
        if np.any(hi_cdf - lo_cdf <= 0) or np.any(np.diff(hi_cdf) <= 0):
            raise BitstreamError(f"channel {ch}: non-increasing cumulative (degenerate model)")
        # tightest window with both omitted tails <= tail_mass / 2
        i_lo = int(np.searchsorted(lo_cdf, half, side="right")) - 1
        i_lo = max(i_lo, 0)
        i_hi = int(np.searchsorted(hi_cdf, 1.0 - half, side="left"))
        i_hi = min(i_hi, symbols.size - 1)
        pmf = hi_cdf[i_lo:i_hi + 1] - lo_cdf[i_lo:i_hi + 1]
        escape = float(lo_cdf[i_lo] + (1.0 - hi_cdf[i_hi]))
        tables.append(CdfTable(int(symbols[i_lo]), int(symbols[i_hi]),
                               _quantize_pmf(pmf, escape)))
    return tables


class _RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def _emit(self):
        self.out.append((self.low >> 56) & 0xFF)
        self.low = (self.low << 8) & _MASK
        self.range = (self.range << 8) & _MASK

    def encode(self, cum: int, freq: int, tot: int = TOTAL_FREQ):
        r = self.range // tot
        self.low = (self.low + cum * r) & _MASK
        self.range = freq * r
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self._emit()

    def encode_bits(self, value: int, bits: int):
        self.encode(value, 1, 1 << bits)

    def finish(self) -> bytes:
        for _ in range(8):
            self.out.append((self.low >> 56) & 0xFF)
            self.low = (self.low << 8) & _MASK
        return bytes(self.out)


class _RangeDecoder:
    def __init__(self, data: bytes, start: int = 0):
        self.data = data
        self.pos = start
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(8):
            self.code = ((self.code << 8) | self._byte()) & _MASK

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise BitstreamError(f"truncated payload at byte offset {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _normalize(self):
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def decode_cum(self, tot: int = TOTAL_FREQ) -> int:
        self.range //= tot
        cum = (self.code - self.low) // self.range
        if cum >= tot:
            raise BitstreamError(f"corrupt payload near byte offset {self.pos}")
        return int(cum)

    def consume(self, cum: int, freq: int):
        self.low = (self.low + cum * self.range) & _MASK
        self.range *= freq
        self._normalize()

    def decode_bits(self, bits: int) -> int:
        cum = self.decode_cum(1 << bits)
        self.consume(cum, 1)
        return cum


def _serialize_tables(tables: list[CdfTable]) -> bytes:
    parts = [struct.pack("<H", len(tables))]
    for t in tables:
        parts.append(struct.pack("<ii", t.v_min, t.v_max))
        parts.append(np.ascontiguousarray(t.counts, dtype="<u4").tobytes())
    return b"".join(parts)


def _need(data: bytes, off: int, nbytes: int):
    if off + nbytes > len(data):
        raise BitstreamError(f"truncated stream at byte offset {len(data)} (needed {off + nbytes})")


def _parse_tables(data: bytes, off: int) -> tuple[list[CdfTable], int]:
    _need(data, off, 2)
    (count,) = struct.unpack_from("<H", data, off)
    off += 2
    tables = []
    for _ in range(count):
        _need(data, off, 8)
        v_min, v_max = struct.unpack_from("<ii", data, off)
        off += 8
        n = v_max - v_min + 2
        _need(data, off, 4 * n)
        counts = np.frombuffer(data, dtype="<u4", count=n, offset=off)
        off += 4 * n
        tables.append(CdfTable(v_min, v_max, counts.copy()))
    return tables, off


def encode(latents: np.ndarray, tables: list[CdfTable], manifest_hash: bytes,
           original_size: tuple[int, int]) -> bytes:
    """Range-code an integer latent tensor (n, c, h, w) into a bitstream."""
    latents = np.asarray(latents)
    if latents.ndim != 4:
        raise BitstreamError(f"latents must be 4-d (n, c, h, w), got shape {latents.shape}")
    if not np.issubdtype(latents.dtype, np.integer):
        if np.any(latents != np.round(latents)):
            raise BitstreamError("latents must be integer-valued; run quantize_test first")
        latents = latents.astype(np.int64)
    n, c, h, w = latents.shape
    if c != len(tables):
        raise BitstreamError(f"{c} latent channels but {len(tables)} tables")
    if len(manifest_hash) != 32:
        raise BitstreamError(f"manifest hash must be 32 bytes, got {len(manifest_hash)}")

    enc = _RangeEncoder()
    for ch in range(c):
        t = tables[ch]
        counts = t.counts.tolist()
        cum = t.cum.tolist()
        esc = t.escape_index
        esc_cum, esc_freq = cum[esc], counts[esc]
        plane = latents[:, ch, :, :].reshape(-1).tolist()
        v_min = t.v_min
        encode_one = enc.encode
        for v in plane:
            i = v - v_min
            if 0 <= i < esc:
                encode_one(cum[i], counts[i])
            else:
                encode_one(esc_cum, esc_freq)
                enc.encode_bits(0 if v >= 0 else 1, 1)
                enc.encode_bits(abs(v), 32)
    payload = enc.finish()

    header = bytearray()
    header += MAGIC
    header += struct.pack("<H", FORMAT_VERSION)
    header += manifest_hash
    header += struct.pack("<4I", n, c, h, w)
    header += struct.pack("<2I", *original_size)
    header += _serialize_tables(tables)
    return bytes(header) + payload


def decoded_header(data: bytes) -> dict:
    """Parse everything before the payload; raises on malformed streams."""
    if data[:4] != MAGIC:
        raise BitstreamError("not a pxiq bitstream (bad magic)")
    _need(data, 4, 58)
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    manifest_hash = data[6:38]
    shape = struct.unpack_from("<4I", data, 38)
    original = struct.unpack_from("<2I", data, 54)
    tables, off = _parse_tables(data, 62)
    return {
        "manifest_hash": manifest_hash,
        "shape": shape,
        "original_size": original,
        "tables": tables,
        "payload_offset": off,
    }


def decode(data: bytes, tables: list[CdfTable] | None = None,
           manifest_hash: bytes | None = None) -> tuple[np.ndarray, tuple[int, int]]:
    """Exact recovery of the encoded latents.

    When ``manifest_hash`` is given it must match the stream header; when
    ``tables`` are given they must match the embedded ones (same model).
    Returns (latents, original image size).
    """
    head = decoded_header(data)
    if manifest_hash is not None and manifest_hash != head["manifest_hash"]:
        raise BitstreamError(
            "manifest hash mismatch: the stream was encoded with a different model "
            f"({head['manifest_hash'].hex()[:16]}... vs {manifest_hash.hex()[:16]}...)")
    embedded = head["tables"]
    if tables is not None:
        if len(tables) != len(embedded) or any(
                a.v_min != b.v_min or a.v_max != b.v_max or not np.array_equal(a.counts, b.counts)
                for a, b in zip(tables, embedded)):
            raise BitstreamError("supplied tables do not match the ones embedded in the stream")
    tables = embedded
    n, c, h, w = head["shape"]
    out = np.zeros((n, c, h, w), dtype=np.int32)
    if out.size:
        from bisect import bisect_right

        dec = _RangeDecoder(data, start=head["payload_offset"])
        count = n * h * w
        for ch in range(c):
            t = tables[ch]
            counts = t.counts.tolist()
            cum = t.cum.tolist()
            esc = t.escape_index
            v_min = t.v_min
            plane = [0] * count
            for i in range(count):
                target = dec.decode_cum()
                sym = bisect_right(cum, target) - 1
                dec.consume(cum[sym], counts[sym])
                if sym == esc:
                    sign = dec.decode_bits(1)
                    mag = dec.decode_bits(32)
                    plane[i] = -mag if sign else mag
                else:
                    plane[i] = sym + v_min
            out[:, ch, :, :] = np.asarray(plane, dtype=np.int32).reshape(n, h, w)
    return out, head["original_size"]
