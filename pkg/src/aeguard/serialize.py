"""SNET binary container for networks.

Layout (all integers little-endian)::

    b"SNET" | u32 version | u32 input rank | u32 dims... | u32 layer count
    per layer:
        u8 kind tag | u16 name length | utf-8 name
        u32 header length | u32 header ints... | f64 parameters (weight, bias)

Parameter payload sizes are implied by the header, so nothing is stored twice.
A trailing record may follow the network (see :mod:`aeguard.assertion`).
"""

import math
import struct

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError, ParseError, ShapeError, VersionError
from .nn import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU

MAGIC = b"SNET"
VERSION = 1

_TAGS = {"dense": 1, "relu": 2, "conv2d": 3, "maxpool2d": 4, "flatten": 5}
_KINDS = {v: k for k, v in _TAGS.items()}
_HEADER_LEN = {"dense": 2, "relu": 0, "conv2d": 4, "maxpool2d": 2, "flatten": 0}


class Reader:
    """Cursor over a bytes buffer that reports the failing offset."""

    def __init__(self, buf, offset=0):
        self.buf = buf
        self.pos = offset

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise ParseError(f"truncated while reading {what}: need {n} bytes, "
                             f"{len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def u8(self, what):
        return self.unpack("B", what)[0]

    def u16(self, what):
        return self.unpack("H", what)[0]

    def u32(self, what):
        return self.unpack("I", what)[0]

    def f64(self, what):
        return self.unpack("d", what)[0]

    def string(self, what):
        n = self.u16(what + " length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"{what} is not valid utf-8", start) from None

    def array(self, shape, what):
        n = math.prod(shape)
        raw = self.take(8 * n, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    def done(self):
        return self.pos == len(self.buf)


def _string(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def encode_network(net):
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.input_shape))]
    parts.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    parts.append(struct.pack("<I", len(net.layers)))
    for name, layer in zip(net.names, net.layers):
        header = layer.config()
        parts.append(struct.pack("<B", _TAGS[layer.kind]))
        parts.append(_string(name))
        parts.append(struct.pack(f"<I{len(header)}I", len(header), *header))
        for p in layer.param_names:
            parts.append(np.ascontiguousarray(getattr(layer, p), dtype="<f8").tobytes())
    return b"".join(parts)


def _make_layer(kind, header, r):
    if kind == "dense":
        i, o = header
        return Dense(i, o, r.array((o, i), "dense weight"), r.array((o,), "dense bias"))
    if kind == "conv2d":
        ci, co, k, s = header
        return Conv2d(ci, co, k, s, r.array((co, ci, k, k), "conv2d weight"), r.array((co,), "conv2d bias"))
    if kind == "maxpool2d":
        return MaxPool2d(*header)
    return ReLU() if kind == "relu" else Flatten()


def decode_network(buf, offset=0):
    """Decode a network starting at ``offset``; return ``(network, end_offset)``."""
    r = Reader(buf, offset)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"unsupported SNET version {version} (supported: {VERSION})")
    rank = r.u32("input rank")
    if rank > 8:
        raise ParseError(f"implausible input rank {rank}", r.pos - 4)
    input_shape = r.unpack(f"{rank}I", "input shape")
    count = r.u32("layer count")
    layers, names = [], []
    for li in range(count):
        at = r.pos
        tag = r.u8(f"layer {li} kind")
        if tag not in _KINDS:
            raise ParseError(f"layer {li}: unknown kind tag {tag}", at)
        kind = _KINDS[tag]
        names.append(r.string(f"layer {li} name"))
        hlen = r.u32(f"layer {li} header length")
        if hlen != _HEADER_LEN[kind]:
            raise IntegrityError(f"layer {li} ({kind}): header has {hlen} ints, expected {_HEADER_LEN[kind]}")
        header = r.unpack(f"{hlen}I", f"layer {li} header")
        try:
            layers.append(_make_layer(kind, header, r))
        except (ConfigError, ShapeError) as e:
            raise IntegrityError(f"layer {li} ({kind}): {e}") from None
    try:
        net = Network(input_shape, layers, names)
    except (ConfigError, ShapeError) as e:
        raise IntegrityError(f"layers do not compose: {e}") from None
    return net, r.pos


def save_model(net, path):
    with open(path, "wb") as f:
        f.write(encode_network(net))


def load_model(path):
    with open(path, "rb") as f:
        buf = f.read()
    net, end = decode_network(buf)
    if end != len(buf):
        raise ParseError(f"{len(buf) - end} unexpected trailing bytes", end)
    return net
