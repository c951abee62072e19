"""Experiment engine: synthetic data, the streaming protocol, and reports.

A run takes the first ``init_fraction`` of the temporal mode, decomposes it
once with TR-ALS, and hands the resulting cores to every algorithm. The rest
of the tensor then arrives in blocks of ``t_new`` slices (the last block may
be shorter). Batch algorithms re-decompose everything seen so far; streaming
algorithms absorb the new block only. Each step records the relative error on
the data seen so far and the wall time of the update.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import metadata as importlib_metadata

import numpy as np

from .errors import ConfigError, DomainError
from .io import load_tensor
from .sketching import SketchConfig, SketchKind, tr_als_sampled, tr_ksrft_als
from .solvers import SolveOptions, extend_temporal, tr_als, tr_als_ne
from .streaming import rstr_init, rstr_update, str_init, str_update
from .tr_algebra import TRCores, random_cores, relative_error, tr_reconstruct

log = logging.getLogger(__name__)

ALGORITHMS = (
    "tr-als-cold",
    "tr-als-hot",
    "tr-als-ne",
    "tr-als-sampled-u",
    "tr-als-sampled-l",
    "tr-ksrft-als",
    "str",
    "rstr-u",
    "rstr-l",
    "rstr-k",
)

CSV_COLUMNS = (
    "algorithm",
    "repetition",
    "step",
    "relative_error",
    "step_seconds",
    "cumulative_seconds",
)


@dataclass
class ProtocolConfig:
    """Parameters of one protocol run.

    The defaults follow the usual experimental setting: rank 5, sketch size
    1000, five new slices per step, a 20% initial prefix, batch solves to
    ``1e-10`` within 50 sweeps, and the shared initialization to ``1e-8``
    within 100 sweeps. Exactly one of ``input`` (a TRT1 path) and
    ``synthetic`` (``(shape, rank)``) names the data.
    """

    algorithms: tuple = ALGORITHMS
    rank: int = 5
    sketch_size: int = 1000
    t_new: int = 5
    init_fraction: float = 0.2
    tol: float = 1e-10
    max_iters: int = 50
    init_tol: float = 1e-8
    init_max_iters: int = 100
    repetitions: int = 1
    seed: int = 0
    input: str | None = None
    synthetic: tuple | None = None
    pinv_rcond: float = 1e-12

    def validate(self) -> "ProtocolConfig":
        algos = tuple(self.algorithms)
        if not algos:
            raise ConfigError("no algorithms selected")
        unknown = [a for a in algos if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {list(ALGORITHMS)}")
        if len(set(algos)) != len(algos):
            raise ConfigError(f"duplicate algorithms in {list(algos)}")
        if not 0.0 < self.init_fraction < 1.0:
            raise ConfigError(f"init_fraction must lie in (0, 1), got {self.init_fraction}")
        for name in ("rank", "sketch_size", "t_new", "max_iters", "init_max_iters", "repetitions"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("tol", "init_tol", "pinv_rcond"):
            if not float(getattr(self, name)) >= 0.0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of an input file and a synthetic shape")
        if self.synthetic is not None:
            shape, rank = self.synthetic
            if len(shape) < 2 or any(int(d) < 1 for d in shape) or int(rank) < 1:
                raise ConfigError(f"bad synthetic shape and rank {self.synthetic}")
        self.algorithms = algos
        return self


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

_ALIASES = {
    "algo": "algorithms",
    "algos": "algorithms",
    "sketch-size": "sketch_size",
    "m": "sketch_size",
    "t-new": "t_new",
    "init-fraction": "init_fraction",
    "max-iters": "max_iters",
    "init-tol": "init_tol",
    "init-max-iters": "init_max_iters",
    "reps": "repetitions",
    "pinv-rcond": "pinv_rcond",
}

# keys that only matter to the CLI; accepted in config files but not protocol fields
CLI_KEYS = ("out", "format")


def parse_synthetic(text: str) -> tuple:
    """``"10x10x10x60:2"`` -> ``((10, 10, 10, 60), 2)``."""
    try:
        dims, rank = text.split(":")
        shape = tuple(int(d) for d in dims.lower().split("x"))
        return shape, int(rank)
    except ValueError:
        raise ConfigError(f"synthetic shape {text!r} is not of the form I1xI2x...xIN:R") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(values: dict) -> ProtocolConfig:
    """Build a validated config from string (or typed) values keyed by field or flag name."""
    fields = {f.name: f for f in dataclasses.fields(ProtocolConfig)}
    kwargs = {}
    for raw_key, value in values.items():
        key = _ALIASES.get(raw_key, raw_key.replace("-", "_"))
        if key in CLI_KEYS or value is None:
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key {raw_key!r}")
        try:
            kwargs[key] = _convert(key, value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {value!r} for {raw_key}: {exc}") from None
    return ProtocolConfig(**kwargs).validate()


def _convert(key, value):
    if key == "algorithms":
        if isinstance(value, str):
            return tuple(a.strip() for a in value.split(",") if a.strip())
        return tuple(value)
    if key == "synthetic":
        return parse_synthetic(value) if isinstance(value, str) else tuple(value)
    if key == "input":
        return str(value)
    if key in ("tol", "init_tol", "init_fraction", "pinv_rcond"):
        return float(value)
    number = float(value) if isinstance(value, str) else value
    if int(number) != number:
        raise ValueError("expected an integer")
    return int(number)


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


def generate_synthetic(shape, rank, seed: int):
    """Exact TR tensor from cores with independent standard normal entries.

    Returns ``(tensor, cores)``.
    """
    if np.isscalar(rank) and int(rank) < 1:
        raise DomainError(f"rank must be at least 1, got {rank}")
    rng = np.random.default_rng(seed)
    cores = random_cores(shape, rank, rng, scale=False)
    return tr_reconstruct(cores), cores


def protocol_steps(temporal: int, init_fraction: float, t_new: int):
    """``(t_init, [(start, stop), ...])`` for a temporal mode of length ``temporal``."""
    t_init = int(round(init_fraction * temporal))
    if t_init < 1 or t_init >= temporal:
        raise ConfigError(
            f"init_fraction {init_fraction} of {temporal} slices leaves no initial block or no steps"
        )
    steps = [(s, min(s + t_new, temporal)) for s in range(t_init, temporal, t_new)]
    return t_init, steps


def cores_digest(cores) -> str:
    h = hashlib.sha256()
    for c in cores:
        h.update(np.ascontiguousarray(c).tobytes())
        h.update(str(c.shape).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# algorithm drivers
# --------------------------------------------------------------------------


class _Batch:
    """Re-decompose everything seen so far each step."""

    def __init__(self, name, cfg: ProtocolConfig, rng):
        self.name = name
        self.cfg = cfg
        self.rng = rng
        self.cores = None

    def start(self, x_init, init: TRCores):
        self.cores = init.copy()

    def step(self, x_seen, x_new):
        cfg = self.cfg
        ranks = self.cores.ranks
        opts = SolveOptions(
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            seed=int(self.rng.integers(2**63)),
            pinv_rcond=cfg.pinv_rcond,
        )
        if self.name == "tr-als-cold":
            init = random_cores(x_seen.shape, ranks, self.rng)
        else:
            init = extend_temporal(x_seen, self.cores, cfg.pinv_rcond)
        if self.name in ("tr-als-cold", "tr-als-hot"):
            self.cores, _ = tr_als(x_seen, ranks, init, opts)
        elif self.name == "tr-als-ne":
            self.cores, _ = tr_als_ne(x_seen, ranks, init, opts)
        elif self.name == "tr-als-sampled-u":
            self.cores, _ = tr_als_sampled(x_seen, ranks, init, SketchKind.UNIFORM, cfg.sketch_size, opts)
        elif self.name == "tr-als-sampled-l":
            self.cores, _ = tr_als_sampled(x_seen, ranks, init, SketchKind.LEVERAGE, cfg.sketch_size, opts)
        else:
            self.cores, _ = tr_ksrft_als(x_seen, ranks, init, cfg.sketch_size, opts)
        return self.cores


_STREAM_KINDS = {"rstr-u": SketchKind.UNIFORM, "rstr-l": SketchKind.LEVERAGE, "rstr-k": SketchKind.KSRFT}


class _Stream:
    """Absorb only the new block each step."""

    def __init__(self, name, cfg: ProtocolConfig, rng):
        self.name = name
        self.cfg = cfg
        self.rng = rng
        self.state = None

    def start(self, x_init, init: TRCores):
        cfg = self.cfg
        if self.name == "str":
            self.state = str_init(x_init, None, init, cfg.pinv_rcond)
        else:
            sketch = SketchConfig(_STREAM_KINDS[self.name], cfg.sketch_size)
            self.state = rstr_init(x_init, None, init, sketch, self.rng, cfg.pinv_rcond)

    def step(self, x_seen, x_new):
        if self.name == "str":
            self.state = str_update(self.state, x_new)
        else:
            self.state = rstr_update(self.state, x_new, self.rng)
        return self.state.cores


def make_driver(name: str, cfg: ProtocolConfig, rng):
    if name in ("str", *_STREAM_KINDS):
        return _Stream(name, cfg, rng)
    if name in ALGORITHMS:
        return _Batch(name, cfg, rng)
    raise ConfigError(f"unknown algorithm {name!r}")


# --------------------------------------------------------------------------
# protocol
# --------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    """Per-step rows, run metadata, and per-(algorithm, step) means over repetitions."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)


def _code_version() -> str:
    try:
        return importlib_metadata.version("trstream")
    except importlib_metadata.PackageNotFoundError:
        from . import __version__

        return __version__


def _load_data(cfg: ProtocolConfig):
    if cfg.input is not None:
        x = load_tensor(cfg.input)
    else:
        shape, rank = cfg.synthetic
        x, _ = generate_synthetic(shape, rank, cfg.seed)
    if x.ndim < 2:
        raise ConfigError(f"need a tensor of order at least 2, got order {x.ndim}")
    return x


def summarize(rows) -> list:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["algorithm"], r["step"]), []).append(r)
    out = []
    for (algo, step), rs in groups.items():
        out.append(
            {
                "algorithm": algo,
                "step": step,
                "repetitions": len(rs),
                **{k: float(np.mean([r[k] for r in rs])) for k in CSV_COLUMNS[3:]},
            }
        )
    return out


def shared_initialization(x_init: np.ndarray, cfg: ProtocolConfig, seed: int):
    """TR-ALS on the initial prefix from seeded random cores; returns ``(cores, errors)``."""
    ranks = (int(cfg.rank),) * x_init.ndim
    start = random_cores(x_init.shape, ranks, np.random.default_rng(seed))
    opts = SolveOptions(max_iters=cfg.init_max_iters, tol=cfg.init_tol, seed=seed, pinv_rcond=cfg.pinv_rcond)
    return tr_als(x_init, ranks, start, opts)


def run_protocol(cfg: ProtocolConfig, tensor: np.ndarray | None = None) -> ExperimentReport:
    """Run every configured algorithm through the streaming protocol.

    ``tensor`` overrides the configured data source when given.
    """
    cfg.validate()
    x = _load_data(cfg) if tensor is None else np.asfortranarray(tensor, dtype=float)
    t_init, steps = protocol_steps(x.shape[-1], cfg.init_fraction, cfg.t_new)
    xnorm = float(np.linalg.norm(x.ravel()))
    if xnorm == 0.0:
        raise DomainError("the input tensor is zero")

    rows = []
    init_digests = []
    received = {}
    x_init = x[..., :t_init]
    for rep in range(cfg.repetitions):
        seed = cfg.seed + rep
        init, init_errors = shared_initialization(x_init, cfg, seed)
        init_digests.append(cores_digest(init))
        log.info("repetition %d: shared init error %.3e after %d sweeps", rep, init_errors[-1], len(init_errors))
        for a_idx, name in enumerate(cfg.algorithms):
            driver = make_driver(name, cfg, np.random.default_rng((seed, a_idx)))
            handed = init.copy()
            received[f"{name}/{rep}"] = cores_digest(handed)
            driver.start(x_init, handed)
            total = 0.0
            for step, (s0, s1) in enumerate(steps, start=1):
                x_seen = x[..., :s1]
                x_new = x[..., s0:s1]
                tic = time.perf_counter()
                cores = driver.step(x_seen, x_new)
                elapsed = time.perf_counter() - tic
                total += elapsed
                err = relative_error(x_seen, cores)
                rows.append(
                    {
                        "algorithm": name,
                        "repetition": rep,
                        "step": step,
                        "relative_error": err,
                        "step_seconds": elapsed,
                        "cumulative_seconds": total,
                    }
                )
                log.debug("%s rep %d step %d: error %.3e, %.3fs", name, rep, step, err, elapsed)

    meta = {
        "config": _config_echo(cfg),
        "tensor_shape": list(x.shape),
        "t_init": t_init,
        "steps": len(steps),
        "step_sizes": [b - a for a, b in steps],
        "init_digests": init_digests,
        "received_init_digests": received,
        "code_version": _code_version(),
        "numpy_version": np.__version__,
    }
    return ExperimentReport(rows, meta, summarize(rows))


def _config_echo(cfg: ProtocolConfig) -> dict:
    echo = dataclasses.asdict(cfg)
    echo["algorithms"] = list(cfg.algorithms)
    if cfg.synthetic is not None:
        echo["synthetic"] = [list(cfg.synthetic[0]), cfg.synthetic[1]]
    return echo


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@contextlib.contextmanager
def _text_sink(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            yield fh


def write_report(report: ExperimentReport, target, fmt: str = "csv") -> None:
    """Write ``report`` to a path or an open text stream."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}; use csv or json")
    if fmt == "csv":
        with _text_sink(target) as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in report.rows:
                writer.writerow(
                    [r["algorithm"], r["repetition"], r["step"]]
                    + [repr(float(r[k])) for k in CSV_COLUMNS[3:]]
                )
    else:
        with _text_sink(target) as fh:
            json.dump(
                {"rows": report.rows, "metadata": report.metadata, "summary": report.summary},
                fh,
                indent=1,
            )


def read_report_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for r in reader:
            rows.append(
                {
                    "algorithm": r["algorithm"],
                    "repetition": int(r["repetition"]),
                    "step": int(r["step"]),
                    **{k: float(r[k]) for k in CSV_COLUMNS[3:]},
                }
            )
    return rows
