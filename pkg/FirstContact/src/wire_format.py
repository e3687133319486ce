"""
Framed serial protocol between the acquisition board and the host.

Frame layout (24 bytes, little-endian multi-byte fields):

    offset  size  field
    0       2     sync, always AA 55
    2       2     seq, wraps at 2**16
    4       4     timestamp_us
    8       2     piezo code (10-bit)
    10      12    six force codes, row-major over the 3 x 2 array
    22      2     CRC-16-CCITT (poly 0x1021, init 0xFFFF) over bytes 0..21

This layout is a stand-in for the board's undocumented format and is the
protocol's source of truth within this project.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import crcmod
import numpy as np
from construct import Array, Const, Int16ul, Int32ul, Struct

from .config import AdcSpec
from .dsp import dequantize, quantize
from .errors import DataError
from .signal_synth import N_FORCE_CHANNELS, GraspTrace

logger = logging.getLogger(__name__)

SYNC = b"\xAA\x55"
MAX_CODE = 1023
FORCE_ORDER: List[Tuple[int, int]] = [(row, col) for row in range(3) for col in range(2)]

FrameBody = Struct(
    "sync" / Const(SYNC),
    "seq" / Int16ul,
    "timestamp_us" / Int32ul,
    "piezo" / Int16ul,
    "force" / Array(N_FORCE_CHANNELS, Int16ul),
)
Frame = Struct(
    "body" / FrameBody,
    "crc" / Int16ul,
)
BODY_LEN = FrameBody.sizeof()
FRAME_LEN = Frame.sizeof()

_crc_func = crcmod.mkCrcFun(0x11021, initCrc=0xFFFF, rev=False, xorOut=0x0000)


def crc16_ccitt(data: bytes) -> int:
    return _crc_func(data)


@dataclass(frozen=True)
class SampleBundle:
    """One multiplexed reading: the piezo sample and the six force cells."""

    seq: int
    timestamp_us: int
    piezo: int
    force: Tuple[int, ...]


def encode_frame(bundle: SampleBundle) -> bytes:
    """
    Serialize one bundle into a 24-byte frame.

    Raises:
        DataError: If a code exceeds 10 bits or a header field is out of range
    """
    codes = (bundle.piezo, *bundle.force)
    if len(bundle.force) != N_FORCE_CHANNELS:
        raise DataError(f"Expected {N_FORCE_CHANNELS} force codes, got {len(bundle.force)}")
    if any(not 0 <= int(c) <= MAX_CODE for c in codes):
        raise DataError(f"ADC codes must lie in [0, {MAX_CODE}], got {codes}")
    if not 0 <= bundle.seq < 1 << 16 or not 0 <= bundle.timestamp_us < 1 << 32:
        raise DataError(f"seq or timestamp out of range: {bundle.seq}, {bundle.timestamp_us}")
    body = FrameBody.build(
        dict(
            seq=bundle.seq,
            timestamp_us=bundle.timestamp_us,
            piezo=int(bundle.piezo),
            force=[int(c) for c in bundle.force],
        )
    )
    return body + Int16ul.build(crc16_ccitt(body))


def _crc_ok(frame: bytes) -> bool:
    return crc16_ccitt(frame[:BODY_LEN]) == int.from_bytes(frame[BODY_LEN:FRAME_LEN], "little")


def _to_bundle(frame: bytes) -> SampleBundle:
    body = Frame.parse(frame).body
    return SampleBundle(body.seq, body.timestamp_us, body.piezo, tuple(body.force))


def decode_frame(frame: bytes) -> SampleBundle:
    """
    Parse and validate exactly one frame.

    Raises:
        DataError: On wrong length, sync or CRC
    """
    frame = bytes(frame)
    if len(frame) != FRAME_LEN:
        raise DataError(f"Frame must be {FRAME_LEN} bytes, got {len(frame)}")
    if frame[:2] != SYNC:
        raise DataError(f"Bad sync bytes {frame[:2].hex()}")
    if not _crc_ok(frame):
        raise DataError("CRC mismatch")
    return _to_bundle(frame)


@dataclass
class ParserState:
    """Streaming parser state; every counter only ever grows."""

    mode: str = "hunting"
    resync_count: int = 0
    crc_fail_count: int = 0
    frames_ok: int = 0
    seq_gap_count: int = 0
    gap_sizes: List[int] = field(default_factory=list)
    bytes_discarded: int = 0
    last_seq: Optional[int] = None
    buffer: bytearray = field(default_factory=bytearray)

    def counters(self) -> dict:
        return {
            "mode": self.mode,
            "frames_ok": self.frames_ok,
            "resync_count": self.resync_count,
            "crc_fail_count": self.crc_fail_count,
            "seq_gap_count": self.seq_gap_count,
            "gap_sizes": list(self.gap_sizes),
            "bytes_discarded": self.bytes_discarded,
        }


def _discard(state: ParserState, n: int):
    del state.buffer[:n]
    state.bytes_discarded += n


def _accept(state: ParserState, frame: bytes, frames: List[SampleBundle]):
    bundle = _to_bundle(frame)
    if state.last_seq is not None:
        gap = (bundle.seq - state.last_seq - 1) % (1 << 16)
        if gap:
            state.seq_gap_count += 1
            state.gap_sizes.append(gap)
            logger.debug(f"Sequence gap of {gap} frames before seq {bundle.seq}")
    state.last_seq = bundle.seq
    state.frames_ok += 1
    frames.append(bundle)
    del state.buffer[:FRAME_LEN]


def feed_parser(state: ParserState, chunk: bytes) -> Tuple[ParserState, List[SampleBundle]]:
    """
    Feed an arbitrary chunk of the byte stream into the parser.

    The decoded sequence does not depend on how the stream is chunked. While
    hunting, the parser looks for the sync word and accepts a candidate only if its
    CRC checks; once synced it expects frames back to back and drops to hunting on
    a sync or CRC failure. Corruption is reported through counters, never raised.

    Args:
        state: Parser state, updated in place
        chunk: Next bytes of the stream

    Returns:
        (the same state, frames decoded from this chunk)
    """
    state.buffer.extend(chunk)
    frames: List[SampleBundle] = []
    while True:
        if state.mode == "hunting":
            idx = state.buffer.find(SYNC)
            if idx < 0:
                keep = 1 if state.buffer[-1:] == SYNC[:1] else 0
                _discard(state, len(state.buffer) - keep)
                break
            _discard(state, idx)
            if len(state.buffer) < FRAME_LEN:
                break
            frame = bytes(state.buffer[:FRAME_LEN])
            if _crc_ok(frame):
                state.mode = "synced"
                _accept(state, frame, frames)
            else:
                _discard(state, 1)
        else:
            if len(state.buffer) < FRAME_LEN:
                break
            frame = bytes(state.buffer[:FRAME_LEN])
            if frame[:2] != SYNC:
                state.resync_count += 1
                state.mode = "hunting"
                logger.debug("Lost sync; hunting")
            elif not _crc_ok(frame):
                state.crc_fail_count += 1
                state.resync_count += 1
                state.mode = "hunting"
                _discard(state, 1)
                logger.debug("CRC failure; hunting")
            else:
                _accept(state, frame, frames)
    return state, frames


def parse_stream(data: bytes, chunk_size: Optional[int] = None) -> Tuple[ParserState, List[SampleBundle]]:
    """Parse a complete byte stream, optionally in fixed-size chunks."""
    state = ParserState()
    frames: List[SampleBundle] = []
    step = chunk_size or max(len(data), 1)
    for start in range(0, len(data), step):
        _, decoded = feed_parser(state, data[start : start + step])
        frames.extend(decoded)
    return state, frames


def stream_trace(trace: GraspTrace, adc: AdcSpec = AdcSpec()) -> bytes:
    """Encode every sample of a trace as one frame; seq counts up from zero."""
    piezo = quantize(trace.vibration, adc)
    force = quantize(trace.force, adc)
    us_per_sample = 1e6 / trace.sample_rate_hz
    out = bytearray()
    for n in range(trace.n_samples):
        bundle = SampleBundle(
            seq=n & 0xFFFF,
            timestamp_us=int(round(n * us_per_sample)) & 0xFFFFFFFF,
            piezo=int(piezo[n]),
            force=tuple(int(c) for c in force[:, n]),
        )
        out += encode_frame(bundle)
    return bytes(out)


def bundles_to_channels(bundles: Sequence[SampleBundle], adc: AdcSpec = AdcSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """(vibration volts, force volts of shape (6, n)) from decoded bundles."""
    piezo = np.array([b.piezo for b in bundles], dtype=np.int64)
    force = np.array([b.force for b in bundles], dtype=np.int64).reshape(-1, N_FORCE_CHANNELS).T
    return dequantize(piezo, adc), dequantize(force, adc)


def parse_to_trace(data: bytes, adc: AdcSpec = AdcSpec()) -> Tuple[np.ndarray, np.ndarray, ParserState]:
    """
    Recover trace channel data from a byte stream.

    Returns:
        (vibration volts, force volts of shape (6, n), final parser state)
    """
    state, bundles = parse_stream(data)
    vibration, force = bundles_to_channels(bundles, adc)
    return vibration, force, state


def fuzz_stream(data: bytes, n_flips: int, rng: np.random.Generator) -> Tuple[bytes, List[int]]:
    """
    Corrupt n_flips distinct bytes by XOR with a random non-zero mask.

    Returns:
        (corrupted stream, sorted corrupted offsets)
    """
    if n_flips > len(data):
        raise ValueError(f"Cannot flip {n_flips} bytes of a {len(data)}-byte stream")
    corrupted = bytearray(data)
    positions = sorted(int(p) for p in rng.choice(len(data), size=n_flips, replace=False))
    for pos in positions:
        corrupted[pos] ^= int(rng.integers(1, 256))
    return bytes(corrupted), positions
