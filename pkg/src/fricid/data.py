"""Measured sequences and their CSV representation.

One file per sequence with header ``t,q1..qn,qd1..qdn,tau1..taun``; floats
are written with 17 significant digits so a write/read cycle is exact.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError


@dataclass
class Sequence:
    t: np.ndarray      # (T,)
    q: np.ndarray      # (T, n)
    qd: np.ndarray     # (T, n)
    tau: np.ndarray    # (T, n)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.q, self.qd, self.tau = (np.asarray(a, dtype=float).reshape(len(self.t), -1)
                                     for a in (self.q, self.qd, self.tau))
        if not (self.q.shape == self.qd.shape == self.tau.shape):
            raise ShapeError("q, qd and tau must share a (T, n) shape")
        if len(self.t) > 2:
            d = np.diff(self.t)
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(self.t[-1])):
                raise ShapeError("timestamps must be uniformly spaced")

    @property
    def n_joints(self):
        return self.q.shape[1]

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def __len__(self):
        return len(self.t)

    def head(self, n):
        return Sequence(self.t[:n], self.q[:n], self.qd[:n], self.tau[:n], dict(self.meta))


def header(n):
    return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"qd{i + 1}" for i in range(n)]
            + [f"tau{i + 1}" for i in range(n)])


def sequence_to_csv(seq: Sequence) -> str:
    rows = np.column_stack([seq.t, seq.q, seq.qd, seq.tau])
    buf = io.StringIO()
    buf.write(",".join(header(seq.n_joints)) + "\n")
    for r in rows:
        buf.write(",".join(f"{v:.17g}" for v in r) + "\n")
    return buf.getvalue()


def write_sequence(path, seq: Sequence):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sequence_to_csv(seq))


def read_sequence(path) -> Sequence:
    with open(path, encoding="utf-8") as fh:
        cols = fh.readline().strip().split(",")
        n = (len(cols) - 1) // 3
        if len(cols) != 3 * n + 1 or cols != header(n):
            raise FormatError(f"{path}: unexpected header {cols}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as err:
            raise FormatError(f"{path}: {err}") from err
    if data.shape[1] != len(cols):
        raise FormatError(f"{path}: expected {len(cols)} columns")
    return Sequence(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], data[:, 1 + 2 * n:])
