import numpy as np
import pytest

from src.wire_format import (
    FRAME_LEN,
    ParserState,
    SampleBundle,
    decode_frame,
    encode_frame,
    feed_parser,
    parse_stream,
)


def random_bundles(n, seed):
    rng = np.random.default_rng(seed)
    return [
        SampleBundle(
            seq=i & 0xFFFF,
            timestamp_us=int(rng.integers(0, 1 << 32)),
            piezo=int(rng.integers(0, 1024)),
            force=tuple(int(c) for c in rng.integers(0, 1024, 6)),
        )
        for i in range(n)
    ]


@pytest.fixture(scope="module")
def hundred_frames():
    bundles = random_bundles(100, seed=1)
    return bundles, b"".join(encode_frame(b) for b in bundles)


@pytest.mark.slow
def test_every_two_way_split_decodes_identically(hundred_frames):
    """Test that every two-way split of a 100-frame stream decodes identically."""
    bundles, stream = hundred_frames
    reference = parse_stream(stream)[0].counters()
    for cut in range(1, len(stream)):
        state = ParserState()
        _, head = feed_parser(state, stream[:cut])
        _, tail = feed_parser(state, stream[cut:])
        assert head + tail == bundles, cut
        assert state.counters() == reference, cut


def test_single_byte_corruption_in_each_frame(hundred_frames):
    """Test that one corrupt byte in any frame costs at most two frames."""
    bundles, stream = hundred_frames
    rng = np.random.default_rng(2)
    for k in range(100):
        damaged = bytearray(stream)
        damaged[k * FRAME_LEN + int(rng.integers(0, FRAME_LEN))] ^= int(rng.integers(1, 256))
        state, decoded = parse_stream(bytes(damaged), chunk_size=int(rng.integers(1, 64)))
        genuine = [b for b in decoded if b in bundles]
        assert len(genuine) >= 98, k
        assert bundles[k] not in decoded
        assert state.crc_fail_count + state.resync_count + state.bytes_discarded > 0


@pytest.mark.slow
def test_random_round_trips_are_exact():
    """Test 100,000 random encode and decode round trips."""
    for bundle in random_bundles(100_000, seed=3):
        assert decode_frame(encode_frame(bundle)) == bundle
