import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demoserve import framing
from demoserve.framing import FrameReader, TunnelFrame, frame_decode, frame_encode


def test_data_frame_exact_bytes():
    encoded = frame_encode(TunnelFrame(framing.DATA, 1, b"hi"))
    assert encoded == bytes(
        [0x02, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x68, 0x69]
    )


def test_ping_frame_exact_bytes():
    assert frame_encode(TunnelFrame(framing.PING)) == bytes([0x04] + [0x00] * 8)


def test_encode_matches_manual_layout():
    # Independent construction of the layout, no struct involved.
    rng = random.Random(99)
    for _ in range(200):
        ftype = rng.choice([framing.OPEN, framing.DATA, framing.CLOSE])
        sid = rng.randrange(1, 2**32)
        payload = b"" if ftype == framing.OPEN else rng.randbytes(rng.randrange(0, 64))
        frame = TunnelFrame(ftype, sid, payload)
        manual = bytes([ftype]) + sid.to_bytes(4, "big") + len(payload).to_bytes(4, "big") + payload
        assert frame_encode(frame) == manual


def test_round_trip_single():
    frame = TunnelFrame(framing.DATA, 1, b"hi")
    decoded, consumed = frame_decode(frame_encode(frame))
    assert decoded == frame
    assert consumed == 11


def test_partial_input_needs_more():
    encoded = frame_encode(TunnelFrame(framing.DATA, 7, b"abcdef"))
    for cut in range(len(encoded)):
        assert frame_decode(encoded[:cut]) is None or cut >= 9


def test_first_five_bytes_need_more():
    encoded = frame_encode(TunnelFrame(framing.DATA, 7, b"abcdef"))
    assert frame_decode(encoded[:5]) is None


def test_oversize_payload_rejected():
    with pytest.raises(framing.OversizePayload):
        frame_encode(TunnelFrame(framing.DATA, 1, b"x" * 65537))
    header = bytes([0x02]) + (1).to_bytes(4, "big") + (65537).to_bytes(4, "big")
    with pytest.raises(framing.OversizePayload):
        frame_decode(header)


def test_max_payload_accepted():
    frame = TunnelFrame(framing.DATA, 1, b"x" * 65536)
    decoded, _ = frame_decode(frame_encode(frame))
    assert decoded == frame


def test_unknown_frame_type():
    with pytest.raises(framing.UnknownFrameType):
        frame_decode(bytes([0x09]) + bytes(8))
    with pytest.raises(framing.UnknownFrameType):
        frame_encode(TunnelFrame(0x55, 1, b""))


@pytest.mark.parametrize(
    "frame",
    [
        TunnelFrame(framing.PING, 3),  # control with nonzero stream
        TunnelFrame(framing.PONG, 1),
        TunnelFrame(framing.HELLO, 2, b"{}"),
        TunnelFrame(framing.OPEN, 1, b"x"),  # OPEN payload must be empty
        TunnelFrame(framing.DATA, 0, b"x"),  # stream 0 is reserved
        TunnelFrame(framing.OPEN, 0),
    ],
)
def test_invariant_violations(frame):
    with pytest.raises(framing.InvariantViolation):
        frame_encode(frame)
    manual = (
        bytes([frame.frame_type])
        + frame.stream_id.to_bytes(4, "big")
        + len(frame.payload).to_bytes(4, "big")
        + frame.payload
    )
    with pytest.raises(framing.InvariantViolation):
        frame_decode(manual)


def random_frame(rng: random.Random) -> TunnelFrame:
    ftype = rng.choice(framing.FRAME_TYPES)
    if ftype in (framing.PING, framing.PONG):
        return TunnelFrame(ftype, 0, rng.randbytes(rng.randrange(0, 16)))
    if ftype in (framing.HELLO, framing.WELCOME):
        return TunnelFrame(ftype, 0, rng.randbytes(rng.randrange(0, 64)))
    sid = rng.randrange(1, 2**32)
    if ftype == framing.OPEN:
        return TunnelFrame(ftype, sid)
    return TunnelFrame(ftype, sid, rng.randbytes(rng.randrange(0, 200)))


def test_fuzz_round_trip_with_random_chunking():
    rng = random.Random(2026)
    frames = [random_frame(rng) for _ in range(10_000)]
    blob = b"".join(frame_encode(f) for f in frames)
    reader = FrameReader()
    decoded = []
    offset = 0
    while offset < len(blob):
        step = rng.randrange(1, 8)
        decoded.extend(reader.feed(blob[offset : offset + step]))
        offset += step
    assert decoded == frames
    assert reader.pending_bytes == 0


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.builds(
            TunnelFrame,
            st.sampled_from([framing.DATA, framing.CLOSE]),
            st.integers(1, 2**32 - 1),
            st.binary(max_size=100),
        ),
        max_size=10,
    ),
    st.randoms(),
)
def test_codec_totality_property(frames, pyrandom):
    blob = b"".join(frame_encode(f) for f in frames)
    reader = FrameReader()
    decoded = []
    offset = 0
    while offset < len(blob):
        step = pyrandom.randrange(1, 8)
        decoded.extend(reader.feed(blob[offset : offset + step]))
        offset += step
    assert decoded == frames


def test_data_frames_chunking():
    payload = bytes(range(256)) * 1024  # 256 KiB
    frames = list(framing.data_frames(5, payload))
    assert all(len(f.payload) <= framing.MAX_PAYLOAD for f in frames)
    assert b"".join(f.payload for f in frames) == payload
    assert all(f.stream_id == 5 for f in frames)
    assert list(framing.data_frames(5, b"")) == []


def test_hello_welcome_helpers():
    import json

    hello = framing.hello_frame("abcdefghij")
    assert json.loads(hello.payload) == {"proto": 1, "token": "abcdefghij"}
    assert json.loads(framing.hello_frame().payload) == {"proto": 1}
    welcome = framing.welcome_frame("http://x/abc", "abc")
    assert json.loads(welcome.payload) == {"url": "http://x/abc", "token": "abc"}
