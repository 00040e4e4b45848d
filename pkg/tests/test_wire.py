import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etlearn import ModelUpdate, StateUpdate, WireError, decode_message, encode_message

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestStateUpdate:
    def test_scalar_message_is_25_bytes(self):
        buf = encode_message(StateUpdate(step=3, x=np.array([1.5])))
        assert len(buf) == 1 + 4 + 4 + 8 + 8

    @given(step=st.integers(min_value=0, max_value=2**63 - 1),
           x=st.lists(finite_floats, min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, step, x):
        msg = StateUpdate(step=step, x=np.array(x))
        assert decode_message(encode_message(msg)) == msg

    def test_round_trip_is_bit_exact(self):
        x = np.array([0.1 + 0.2, 1e-308, -1.5e300])
        out = decode_message(encode_message(StateUpdate(step=0, x=x)))
        assert out.x.tobytes() == x.tobytes()


class TestModelUpdate:
    @given(n=st.integers(1, 4), q=st.integers(1, 3),
           version=st.integers(min_value=0, max_value=2**32),
           data=st.data())
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, n, q, version, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        msg = ModelUpdate(
            version=version,
            a_cl=rng.normal(size=(n, n)),
            b=rng.normal(size=(n, q)),
            sigma=rng.normal(size=(n, n)),
        )
        assert decode_message(encode_message(msg)) == msg

    def test_length(self):
        msg = ModelUpdate(version=1, a_cl=np.eye(2), b=np.ones((2, 1)), sigma=np.eye(2))
        assert len(encode_message(msg)) == 17 + 8 * (4 + 2 + 4)


class TestRejection:
    def test_unknown_kind_byte(self):
        buf = encode_message(StateUpdate(step=0, x=np.array([0.0])))
        bad = b"\xff" + buf[1:]
        with pytest.raises(WireError, match="kind"):
            decode_message(bad)

    def test_truncated_header(self):
        with pytest.raises(WireError, match="short"):
            decode_message(b"\x01\x00\x00")

    def test_truncated_body(self):
        buf = encode_message(StateUpdate(step=0, x=np.array([1.0, 2.0])))
        with pytest.raises(WireError):
            decode_message(buf[:-4])

    def test_trailing_garbage(self):
        buf = encode_message(StateUpdate(step=0, x=np.array([1.0])))
        with pytest.raises(WireError):
            decode_message(buf + b"\x00")

    def test_zero_dimension(self):
        buf = bytearray(encode_message(StateUpdate(step=0, x=np.array([1.0]))))
        buf[1:5] = (0).to_bytes(4, "little")
        with pytest.raises(WireError, match="dimensions"):
            decode_message(bytes(buf))

    def test_unencodable_payload(self):
        with pytest.raises(WireError):
            encode_message({"not": "a message"})
