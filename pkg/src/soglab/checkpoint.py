"""Plain-text parameter checkpoints.

Layout (one token group per line, ASCII, ``\\n`` line endings)::

    soglab-net 1
    kind dense | twohead

    # dense
    layers <L>
    layer <i> <in> <out> <activation>     # repeated L times, each followed by
    <w_00> <w_01> ... <w_0,in-1>          #   <out> weight rows (row-major)
    ...
    <b_0> ... <b_out-1>                   #   one bias line

    # twohead
    head_activation <activation>
    state_head <in> <out>   + weight rows + bias line
    latent_head <in> <out>  + weight rows + bias line
    log_std <n>
    <s_0> ... <s_n-1>
    trunk
    <dense body: "layers <L>" then layers as above>

Numbers are written with Python's shortest round-trip ``repr`` so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import atomic_write_text
from .nn import Dense, DenseNet, TwoHeadPolicyNet

MAGIC = "soglab-net 1"


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _matrix_lines(w: np.ndarray, b: np.ndarray) -> list[str]:
    return [_row(r) for r in w] + [_row(b)]


def _dense_lines(net: DenseNet) -> list[str]:
    lines = [f"layers {len(net.layers)}"]
    for i, layer in enumerate(net.layers):
        lines.append(f"layer {i} {layer.in_dim} {layer.out_dim} {layer.activation}")
        lines += _matrix_lines(layer.weight, layer.bias)
    return lines


def dumps(net) -> str:
    lines = [MAGIC]
    if isinstance(net, DenseNet):
        lines.append("kind dense")
        lines += _dense_lines(net)
    elif isinstance(net, TwoHeadPolicyNet):
        lines += ["kind twohead", f"head_activation {net.head_activation}"]
        for name, head in (("state_head", net.state_head), ("latent_head", net.latent_head)):
            lines.append(f"{name} {head.in_dim} {head.out_dim}")
            lines += _matrix_lines(head.weight, head.bias)
        lines += [f"log_std {net.log_std.size}", _row(net.log_std), "trunk"]
        lines += _dense_lines(net.trunk)
    else:
        raise TypeError(f"cannot checkpoint {type(net).__name__}")
    return "\n".join(lines) + "\n"


def save(net, path) -> Path:
    return atomic_write_text(path, dumps(net))


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> list[str]:
        if self.pos >= len(self.lines):
            raise ValueError("truncated checkpoint")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def expect(self, key: str) -> list[str]:
        toks = self.next()
        if not toks or toks[0] != key:
            raise ValueError(f"line {self.pos}: expected {key!r}, got {' '.join(toks)!r}")
        return toks[1:]

    def floats(self, n: int) -> np.ndarray:
        toks = self.next()
        if len(toks) != n:
            raise ValueError(f"line {self.pos}: expected {n} numbers, got {len(toks)}")
        return np.array([float(t) for t in toks])

    def affine(self, n_in: int, n_out: int, act: str = "identity") -> Dense:
        w = np.stack([self.floats(n_in) for _ in range(n_out)]) if n_out else np.zeros((0, n_in))
        return Dense(w, self.floats(n_out), act)

    def dense(self) -> DenseNet:
        (n,) = self.expect("layers")
        layers = []
        for i in range(int(n)):
            idx, n_in, n_out, act = self.expect("layer")
            if int(idx) != i:
                raise ValueError(f"line {self.pos}: layer index {idx}, expected {i}")
            layers.append(self.affine(int(n_in), int(n_out), act))
        return DenseNet(layers)


def loads(text: str):
    r = _Reader(text)
    if " ".join(r.next()) != MAGIC:
        raise ValueError("not a soglab checkpoint (bad header)")
    (kind,) = r.expect("kind")
    if kind == "dense":
        return r.dense()
    if kind == "twohead":
        (act,) = r.expect("head_activation")
        heads = []
        for name in ("state_head", "latent_head"):
            n_in, n_out = r.expect(name)
            heads.append(r.affine(int(n_in), int(n_out)))
        (n,) = r.expect("log_std")
        log_std = r.floats(int(n))
        r.expect("trunk")
        return TwoHeadPolicyNet(heads[0], heads[1], r.dense(), log_std, act)
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))
