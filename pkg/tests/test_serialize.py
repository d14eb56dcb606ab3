import struct

import numpy as np
import pytest

from aeguard.errors import FormatError, IntegrityError, ParseError, VersionError
from aeguard.nn import build_network, forward_batch
from aeguard.serialize import decode_network, encode_network, load_model, save_model
from aeguard.tensor import Rng

LENET_ISH = [
    {"kind": "conv2d", "out_ch": 3, "kernel": 3}, {"kind": "relu"}, {"kind": "maxpool2d", "window": 2},
    {"kind": "flatten"}, {"kind": "dense", "out": 12}, {"kind": "relu"}, {"kind": "dense", "out": 5},
]


@pytest.fixture
def net():
    return build_network((1, 10, 10), LENET_ISH, Rng(11))


def test_round_trip_is_bit_identical(net, tmp_path):
    save_model(net, tmp_path / "m.snet")
    back = load_model(tmp_path / "m.snet")
    assert back.names == net.names and back.input_shape == net.input_shape
    assert [l.kind for l in back.layers] == [l.kind for l in net.layers]
    for a, b in zip(net.layers, back.layers):
        assert a.config() == b.config()
        for name in a.param_names:
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    x = Rng(2).normal((8, 1, 10, 10))
    assert forward_batch(net, x).tobytes() == forward_batch(back, x).tobytes()
    assert encode_network(back) == (tmp_path / "m.snet").read_bytes()


def test_special_float_bit_patterns_survive(tmp_path):
    net = build_network((2,), [{"kind": "dense", "out": 2}], Rng(0))
    net.layers[0].weight = np.array([[-0.0, 5e-324], [1.7976931348623157e308, np.nextafter(1.0, 2.0)]])
    back, _ = decode_network(encode_network(net))
    assert back.layers[0].weight.tobytes() == net.layers[0].weight.tobytes()


def test_every_truncation_is_a_parse_error(net):
    buf = encode_network(net)
    for cut in list(range(0, 64)) + list(range(64, len(buf), 97)):
        with pytest.raises((ParseError, FormatError)) as exc:
            decode_network(buf[:cut])
        if exc.type is ParseError:
            assert 0 <= exc.value.offset <= cut


def test_truncated_file_reports_offset(net, tmp_path):
    buf = encode_network(net)
    (tmp_path / "t.snet").write_bytes(buf[:-5])
    with pytest.raises(ParseError) as exc:
        load_model(tmp_path / "t.snet")
    assert "offset" in str(exc.value)


def test_bad_magic_and_version(net):
    buf = encode_network(net)
    with pytest.raises(FormatError):
        decode_network(b"XNET" + buf[4:])
    with pytest.raises(VersionError):
        decode_network(buf[:4] + struct.pack("<I", 2) + buf[8:])


def test_trailing_bytes_rejected(net, tmp_path):
    (tmp_path / "x.snet").write_bytes(encode_network(net) + b"\0")
    with pytest.raises(ParseError):
        load_model(tmp_path / "x.snet")


def test_inconsistent_shapes_are_integrity_errors():
    net = build_network((4,), [{"kind": "dense", "out": 3}, {"kind": "dense", "out": 2}], Rng(0))
    buf = bytearray(encode_network(net))
    # second dense header: in_dim 3 -> 4 (then its payload size changes too, but shapes fail to compose first)
    first_end = 4 + 8 + 4 + 4 + 1 + 2 + len("dense0") + 4 + 8 + 8 * (3 * 4 + 3)
    hdr = first_end + 1 + 2 + len("dense1") + 4
    struct.pack_into("<I", buf, hdr, 4)
    buf = bytes(buf) + b"\0" * 8 * 2
    with pytest.raises(IntegrityError):
        decode_network(buf)


def test_unknown_kind_tag(net):
    buf = bytearray(encode_network(net))
    first_layer = 4 + 4 + 4 + 4 * 3 + 4
    buf[first_layer] = 99
    with pytest.raises(ParseError) as exc:
        decode_network(bytes(buf))
    assert exc.value.offset == first_layer
