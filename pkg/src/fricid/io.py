"""Run configuration, binary model files and artifact manifests.

Model file layout (all integers little-endian)::

    8 bytes   magic  b"FRICIDMF"
    4 bytes   format version (uint32)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header (sorted keys)
    ...       float64 little-endian arrays, in header order

The header carries the plant, model metadata, the array layout, a hash of
its own content and a SHA-256 digest of the payload; both are checked on
load so truncated or edited files raise :class:`FormatError`.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dynamics import LinkInertialParams, PlanarArm
from .errors import ConfigError, FormatError
from .models import ForwardModel, model_from_parts

MAGIC = b"FRICIDMF"
FORMAT_VERSION = 1

# Every tunable default of the library, in one place.
DEFAULT_CONFIG = """\
[plant]
# one entry per link, comma separated
mass = 1.0
length = 0.5
com_x = 0.3
com_y = 0.0
izz = 0.01
gravity = 9.81

[truth]
# ground-truth friction law for synthesis: none, simple, stribeck, lugre, gms
law = lugre
sigma0 = 20.0
sigma1 = 1.0
sigma2 = 0.15
fc = 0.3
fs = 0.45
vs = 0.15
delta = 2.0
coulomb = 0.3
viscous = 0.15
gms_stiffness = 200.0, 1000.0, 5000.0
gms_weights = 0.5, 0.3, 0.2
gms_attraction = 20.0

[noise]
q = 1e-3
qd = 1e-2
tau = 2e-2

[controller]
kp = 100.0
kd = 6.0

[doe]
harmonics = 20
period = 5.0
duration = 31.4
grid_dt = 0.004
margin = 0.02
decay = 1.0
q_min = -1.5707963267948966
q_max = 1.5707963267948966
qd_max = 3.0
qdd_max = 20.0
jerk_max = 500.0

[synthesis]
dt = 0.004
substeps = 10
trajectories = 3
runs = 2
validation = 1

[identify]
method = lvm
filter_cutoff = 10.0
filter_order = 4
trim = 50
window_seconds = 1.5
windows = 120
simplex_evaluations = 600
gms_elements = 3
nn_hidden = 32, 32
nn_steps = 3000
nn_lr = 3e-3
rnn_hidden = 32
rnn_layers = 3
rnn_window = 64
rnn_steps = 800
rnn_lr = 2e-3

[lvm]
n_latent = 1
friction_hidden = 32, 32
latent_hidden = 32
em_steps = 1250
pretrain_steps = 3000
latent_var = 1e-4
freeze_lumped = false

[em]
max_iter = 20
tol_factor = 0.5
patience = 3
n_particles = 200
replicates = 2
smoother = genealogy
ess_threshold = 0.5
anchor_initial = true
epochs = 2
batch_size = 256
lr = 3e-4
mstep_pairs = 20000
elbo_pairs = 20000
max_retries = 3
update_q = true
update_r = true
update_initial = true
var_floor = 1e-10
common_random_numbers = true
checkpoint_every = 0

[eval]
horizon = 10.0
blowup = 100.0
curve_particles = 200

[run]
seed = 0
threads = 1
"""


class RunConfig:
    """Typed access to a flat-section key-value configuration."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    @classmethod
    def default(cls):
        return cls.from_string("")

    @classmethod
    def from_string(cls, text):
        p = configparser.ConfigParser(inline_comment_prefixes=("#",))
        p.read_string(DEFAULT_CONFIG)
        try:
            user = configparser.ConfigParser(inline_comment_prefixes=("#",))
            user.read_string(text)
        except configparser.Error as err:
            raise ConfigError(str(err)) from err
        for sec in user.sections():
            if not p.has_section(sec):
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in user.items(sec):
                if not p.has_option(sec, key):
                    raise ConfigError(f"unknown config key {sec}.{key}")
                p.set(sec, key, val)
        return cls(p)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls.default()
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_string(fh.read())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err

    def get(self, sec, key):
        return self.parser.get(sec, key)

    def set(self, sec, key, value):
        self.parser.set(sec, key, str(value))

    def float(self, sec, key):
        try:
            return self.parser.getfloat(sec, key)
        except ValueError as err:
            raise ConfigError(f"{sec}.{key}: {err}") from err

    def int(self, sec, key):
        try:
            return self.parser.getint(sec, key)
        except ValueError as err:
            raise ConfigError(f"{sec}.{key}: {err}") from err

    def bool(self, sec, key):
        try:
            return self.parser.getboolean(sec, key)
        except ValueError as err:
            raise ConfigError(f"{sec}.{key}: {err}") from err

    def floats(self, sec, key):
        try:
            return np.array([float(v) for v in self.get(sec, key).split(",") if v.strip()])
        except ValueError as err:
            raise ConfigError(f"{sec}.{key}: {err}") from err

    def optional_int(self, sec, key):
        v = self.get(sec, key).strip().lower()
        return None if v in ("", "none", "all") else self.int(sec, key)

    def to_string(self):
        lines = []
        for sec in self.parser.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in self.parser.items(sec)]
            lines.append("")
        return "\n".join(lines)

    def hash(self):
        return hashlib.sha256(self.to_string().encode()).hexdigest()


# -- plant -------------------------------------------------------------------------
def plant_from_config(cfg: RunConfig) -> PlanarArm:
    cols = [cfg.floats("plant", k) for k in ("mass", "length", "com_x", "com_y", "izz")]
    n = max(len(c) for c in cols)
    if any(len(c) not in (1, n) for c in cols) or n not in (1, 2):
        raise ConfigError("plant entries need one value per link (1 or 2 links)")
    cols = [np.broadcast_to(c, n) for c in cols]
    links = [LinkInertialParams(mass=cols[0][i], length=cols[1][i], com=(cols[2][i], cols[3][i], 0.0),
                                inertia=(0.0, 0.0, cols[4][i], 0.0, 0.0, 0.0)) for i in range(n)]
    return PlanarArm(links, gravity=cfg.float("plant", "gravity"))


def plant_to_dict(plant: PlanarArm) -> dict:
    return {"gravity": float(plant.gravity),
            "links": [{"mass": float(lk.mass), "length": float(lk.length),
                       "com": [float(v) for v in lk.com], "inertia": [float(v) for v in lk.inertia],
                       "axis": [float(v) for v in lk.axis]} for lk in plant.links]}


def plant_from_dict(d: dict) -> PlanarArm:
    links = [LinkInertialParams(mass=lk["mass"], length=lk["length"], com=tuple(lk["com"]),
                                inertia=tuple(lk["inertia"]), axis=tuple(lk["axis"])) for lk in d["links"]]
    return PlanarArm(links, gravity=d["gravity"])


# -- model files ---------------------------------------------------------------------
def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_bytes(model: ForwardModel, extra: dict | None = None) -> bytes:
    arrays = model.arrays()
    layout, chunks = [], []
    for name in sorted(arrays):
        a = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8"))
        layout.append({"name": name, "shape": list(a.shape)})
        chunks.append(a.tobytes())
    payload = b"".join(chunks)
    body = {"plant": plant_to_dict(model.plant), "meta": model.meta(), "layout": layout,
            "extra": extra or {}, "tool_version": __version__,
            "payload_sha256": hashlib.sha256(payload).hexdigest()}
    body["config_hash"] = hashlib.sha256(_canonical(body)).hexdigest()
    header = _canonical(body)
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + payload


def save_model(path, model: ForwardModel, extra: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(model_bytes(model, extra))


@dataclass
class ModelFile:
    model: ForwardModel
    header: dict


def parse_model(buf: bytes, name="<bytes>") -> ModelFile:
    if len(buf) < len(MAGIC) + 12:
        raise FormatError(f"{name}: file too short for a model header")
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{name}: not a model file (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[len(MAGIC):len(MAGIC) + 12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    if len(buf) < start + hlen:
        raise FormatError(f"{name}: truncated header")
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"{name}: corrupt header ({err})") from err
    body = {k: v for k, v in header.items() if k != "config_hash"}
    if hashlib.sha256(_canonical(body)).hexdigest() != header.get("config_hash"):
        raise FormatError(f"{name}: header hash mismatch")
    payload = buf[start + hlen:]
    need = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["layout"])
    if len(payload) != need:
        raise FormatError(f"{name}: payload has {len(payload)} bytes, expected {need}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise FormatError(f"{name}: payload checksum mismatch")
    arrays, pos = {}, 0
    for e in header["layout"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).reshape(e["shape"]).copy()
        pos += 8 * count
    plant = plant_from_dict(header["plant"])
    return ModelFile(model_from_parts(plant, header["meta"], arrays), header)


def load_model(path) -> ModelFile:
    with open(path, "rb") as fh:
        return parse_model(fh.read(), str(path))


# -- manifests -----------------------------------------------------------------------
def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg: RunConfig, seeds: dict, extra=None):
    """``manifest.json`` with seeds, config (text and hash), tool version and output digests."""
    files = {}
    for root, _, names in os.walk(out_dir):
        for n in sorted(names):
            p = os.path.join(root, n)
            rel = os.path.relpath(p, out_dir)
            if rel != "manifest.json":
                files[rel] = file_digest(p)
    doc = {"command": command, "seeds": seeds, "config": cfg.to_string(),
           "config_hash": cfg.hash(), "tool_version": __version__, "files": dict(sorted(files.items())),
           **(extra or {})}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as err:
        raise FileNotFoundError(f"manifest not found: {path}") from err
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: corrupt manifest ({err})") from err
