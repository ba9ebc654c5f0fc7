"""Model files, codebooks, capacity, experiment orchestration and CSV output.

Model file (JSON)::

    {
      "alphabet": {"x": 2, "y": 2, "z": 2},
      "states":   {"omega": 1, "sigma": 1, "theta": 1},
      "initial":  {"omega": 0, "sigma": 0, "theta": 0},
      "G": [...],   # flat, index order (omega', x, omega)
      "V": [...],   # flat, index order (x, theta', y, theta)
      "W": [...]    # flat, index order (x, sigma', z, sigma)
    }

Conditioning indices vary slowest, so each consecutive block of the flat
array is one conditional distribution. "initial" may be omitted (all 0).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .decoding import (
    ML,
    UNIVERSAL,
    Codebook,
    DecoderKind,
    codebook_size,
    exact_avg_error,
    monte_carlo_errors,
)
from .errors import ModelParseError, NotMemoryless, ValidationError
from .estimation import EstimationConfig, baum_welch, plug_in_log_prob
from .exact import ExactTables
from .lz import joint_parse, v_metric
from .model import InducedKernel, SystemModel, sample_y
from .verification import bounds_sweep, default_log_alpha

CSV_HEADER = [
    "mode", "model", "n", "rate", "M", "decoder", "metric", "value", "right", "holds",
    "trials", "errors", "ci_low", "ci_high", "seed", "version", "instance",
]
MODES = ("exact", "monte-carlo", "bounds-check", "estimate", "parse")


# --------------------------------------------------------------------------
# model files

def _require(doc, key, where="model file"):
    if not isinstance(doc, dict) or key not in doc:
        raise ModelParseError(f"{where}: missing key {key!r}")
    return doc[key]


def _size(doc, key, where):
    v = _require(doc, key, where)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ModelParseError(f"{where}.{key}: expected a positive integer, got {v!r}")
    return v


def _flat(doc, key, shape):
    raw = _require(doc, key)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelParseError(f"{key}: non-numeric entries") from exc
    if arr.ndim != 1 or arr.size != math.prod(shape):
        raise ModelParseError(f"{key}: expected a flat list of {math.prod(shape)} numbers, got shape {arr.shape}")
    return arr.reshape(shape)


def model_from_dict(doc) -> SystemModel:
    al = _require(doc, "alphabet")
    st = _require(doc, "states")
    nx, ny, nz = (_size(al, k, "alphabet") for k in ("x", "y", "z"))
    om, sg, th = (_size(st, k, "states") for k in ("omega", "sigma", "theta"))
    init = doc.get("initial", {})
    if not isinstance(init, dict):
        raise ModelParseError("initial: expected an object")
    G = _flat(doc, "G", (om, nx, om))
    V = _flat(doc, "V", (nx, th, ny, th))
    W = _flat(doc, "W", (nx, sg, nz, sg))
    return SystemModel.from_kernels(
        G, V, W,
        omega0=int(init.get("omega", 0)),
        sigma0=int(init.get("sigma", 0)),
        theta0=int(init.get("theta", 0)),
    )


def model_to_dict(model: SystemModel) -> dict:
    al, st = model.alphabet, model.states
    return {
        "alphabet": {"x": al.x_size, "y": al.y_size, "z": al.z_size},
        "states": {"omega": st.omega_size, "sigma": st.sigma_size, "theta": st.theta_size},
        "initial": {"omega": st.omega0, "sigma": st.sigma0, "theta": st.theta0},
        "G": model.G.ravel().tolist(),
        "V": model.V.ravel().tolist(),
        "W": model.W.ravel().tolist(),
    }


def load_model(path) -> SystemModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)


def save_model(model: SystemModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def model_from_induced(pi: InducedKernel, z_size: int | None = None) -> SystemModel:
    """Wrap an estimated kernel as a model whose induced source equals it.

    The source state carries the hidden state (G = pi_hat with X = Y) and
    V is the identity. W is an identity placeholder over Z = Y; only the
    induced source of the result is meaningful.
    """
    ny = pi.y_size
    z_size = ny if z_size is None else z_size
    V = np.eye(ny).reshape(ny, 1, ny, 1)
    W = np.zeros((ny, 1, z_size, 1))
    for x in range(ny):
        W[x, 0, x % z_size, 0] = 1.0
    return SystemModel.from_kernels(pi.table, V, W, omega0=pi.initial)


# --------------------------------------------------------------------------
# codebooks

def generate_codebook(model: SystemModel, n: int, R: float, seed: int) -> Codebook:
    """M = ceil(e^{nR}) codewords, each drawn as x ~ G then y ~ V( . | x)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if R < 0:
        raise ValidationError("rate must be >= 0")
    M = codebook_size(n, R)
    cw = sample_y(model, n, M, np.random.default_rng(seed))
    return Codebook(cw, seed, R)


def save_codebook(cb: Codebook, path) -> None:
    doc = {"n": cb.n, "rate": cb.rate, "seed": cb.seed, "M": cb.M,
           "codewords": ["".join(map(str, row)) if cb.codewords.max() < 10 else list(map(int, row))
                         for row in cb.codewords]}
    Path(path).write_text(json.dumps(doc) + "\n")


def _decode_row(row):
    if isinstance(row, str):
        return [int(ch) for ch in row]
    return [int(v) for v in row]


def load_codebook(path) -> Codebook:
    try:
        doc = json.loads(Path(path).read_text())
        rows = [_decode_row(r) for r in _require(doc, "codewords", "codebook file")]
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise ModelParseError(f"{path}: codewords must be non-empty and of equal length")
    return Codebook(np.array(rows), doc.get("seed"), float(doc.get("rate", 0.0)))


# --------------------------------------------------------------------------
# capacity

def single_letter_joint(model: SystemModel) -> np.ndarray:
    if not model.is_memoryless:
        raise NotMemoryless("capacity_memoryless needs |Omega| = |Sigma| = |Theta| = 1")
    g = model.G[0, :, 0]
    return np.einsum("x,xy,xz->yz", g, model.V[:, 0, :, 0], model.W[:, 0, :, 0])


def capacity_memoryless(model: SystemModel) -> float:
    """I(Y; Z) in nats from the single-letter joint distribution."""
    pyz = single_letter_joint(model)
    py = pyz.sum(axis=1, keepdims=True)
    pz = pyz.sum(axis=0, keepdims=True)
    mask = pyz > 0
    return float(np.sum(pyz[mask] * np.log(pyz[mask] / (py * pz)[mask])))


# --------------------------------------------------------------------------
# experiments

def version_stamp() -> str:
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{base}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def parse_decoder(name: str, alpha: float | None = None, default_log_alpha: float | None = None) -> DecoderKind:
    """Decoder from its name; threshold uses `alpha`, else `default_log_alpha`."""
    name = name.strip().lower()
    if name == "ml":
        return ML
    if name == "universal":
        return UNIVERSAL
    if name == "threshold":
        if alpha is not None:
            return DecoderKind.threshold(alpha)
        if default_log_alpha is None:
            raise ValidationError("threshold decoder needs alpha")
        return DecoderKind.threshold(log_alpha=default_log_alpha)
    raise ValidationError(f"unknown decoder {name!r} (ml, universal, threshold)")


@dataclass
class ExperimentConfig:
    mode: str
    model: str | None = None
    n: list[int] = field(default_factory=lambda: [4])
    rate: float = 0.1
    decoders: list[str] = field(default_factory=lambda: ["ml", "universal"])
    trials: int = 10_000
    seed: int = 0
    out: str | None = None
    alpha: float | None = None
    plug_in: str | None = None
    y: str | None = None
    z: str | None = None

    def __post_init__(self):
        if isinstance(self.n, int):
            self.n = [self.n]
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.rate < 0:
            raise ValidationError("rate must be >= 0")
        if any(k < 1 for k in self.n):
            raise ValidationError("n must be >= 1")
        if self.mode == "monte-carlo" and self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if self.alpha is not None and not self.alpha > 1:
            raise ValidationError("alpha must be > 1")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _row(**kw) -> dict:
    return {k: kw.get(k) for k in CSV_HEADER}


def _kinds(cfg: ExperimentConfig, model: SystemModel, n: int) -> list[DecoderKind]:
    need_default = cfg.alpha is None and any(d.strip().lower() == "threshold" for d in cfg.decoders)
    la = default_log_alpha(model, n) if need_default else None
    return [parse_decoder(d, cfg.alpha, la) for d in cfg.decoders]


def _instance_str(inst: dict) -> str:
    parts = []
    for k in sorted(inst):
        v = inst[k]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = "".join(str(int(s)) for s in v)
        parts.append(f"{k}={v}")
    return ";".join(parts)


def run(cfg: ExperimentConfig) -> list[dict]:
    """Rows for the requested experiment, sorted deterministically."""
    ver = version_stamp()
    rows: list[dict] = []
    if cfg.mode == "parse":
        if cfg.y is None or cfg.z is None:
            raise ValidationError("parse mode needs y and z")
        p = joint_parse(_decode_row(cfg.y), _decode_row(cfg.z))
        base = dict(mode="parse", n=p.n, version=ver, instance=f"y={cfg.y};z={cfg.z}")
        rows.append(_row(metric="c_yz", value=p.c_yz, **base))
        rows.append(_row(metric="c_z", value=p.c_z, **base))
        for ell, c in enumerate(p.c_ell, start=1):
            rows.append(_row(metric=f"c_{ell}", value=c, **base))
        rows.append(_row(metric="v", value=v_metric(p), **base))
        return rows

    if cfg.model is None:
        raise ValidationError(f"{cfg.mode} mode needs a model file")
    model = load_model(cfg.model)
    name = os.path.basename(cfg.model)
    plug = plug_in_log_prob(load_model(cfg.plug_in).pi) if cfg.plug_in else None

    for n in sorted(cfg.n):
        M = codebook_size(n, cfg.rate)
        base = dict(model=name, n=n, rate=cfg.rate, M=M, seed=cfg.seed, version=ver)
        if cfg.mode == "exact":
            tables = ExactTables(model, n)
            for k in _kinds(cfg, model, n):
                r = exact_avg_error(model, n, cfg.rate, k, tables)
                rows.append(_row(mode="exact", decoder=k.name, metric="avg_error", value=r.value,
                                 **{**base, "seed": None}))
        elif cfg.mode == "monte-carlo":
            kinds = _kinds(cfg, model, n)
            for r in monte_carlo_errors(model, n, cfg.rate, kinds, cfg.trials, cfg.seed, plug_in=plug):
                rows.append(_row(mode="monte-carlo", decoder=r.decoder, metric="avg_error", value=r.value,
                                 trials=r.trials, errors=r.errors, ci_low=r.ci_low, ci_high=r.ci_high, **base))
        elif cfg.mode == "bounds-check":
            log_alpha = None if cfg.alpha is None else math.log(cfg.alpha)
            for b in bounds_sweep(model, n, cfg.rate, log_alpha):
                rows.append(_row(mode="bounds-check", metric=b.name, value=b.left, right=b.right,
                                 holds=b.holds, instance=_instance_str(b.instance)
                                 + (";logged_only" if b.logged_only else ""), **{**base, "seed": None}))
        elif cfg.mode == "estimate":
            raise ValidationError("estimate mode is run through run_estimate")
    return rows


def run_estimate(codebook_path, H: int, out_model, floor: float = 1e-6, max_iter: int = 200,
                 tol: float = 1e-8, seed: int = 0, y_size: int | None = None):
    """Fit pi_hat to the codewords of a codebook file and save it as a model file."""
    cb = load_codebook(codebook_path)
    res = baum_welch(list(cb.codewords), EstimationConfig(H, floor, max_iter, tol, seed), y_size=y_size)
    if out_model is not None:
        save_model(model_from_induced(res.pi), out_model)
    return res


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    return buf.getvalue()


def write_csv(rows: list[dict], path) -> None:
    text = rows_to_csv(rows)
    if path is None or path == "-":
        print(text, end="")
    else:
        Path(path).write_text(text)
