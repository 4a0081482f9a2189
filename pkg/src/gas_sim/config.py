"""Experiment configuration: flat ``key = value`` text with ``[section]`` headers.

Every key belongs to exactly one section. Sections may be omitted, and so may
any key; defaults follow a standard asynchronous split-learning setup
(20 clients, 10 concurrent, 20 local iterations, lr 0.01, B = 32, s(n) = n).
"""

import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .actdist import FULL_COV_MAX_DIM, WeightingFn
from .errors import ParseError, ValidationError

MODES = ("gas", "async_nogen", "sync")


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class ExperimentConfig:
    # [run]
    mode: str = _f("run", "gas")
    seed: int = _f("run", 0)
    T: int = _f("run", 1000)
    eval_every: int = _f("run", 1)
    measure_dissimilarity: bool = _f("run", False)
    probe_per_class: int = _f("run", 16)
    out_dir: str = _f("run", "out")
    # [federation]
    K: int = _f("federation", 20)
    C: int = _f("federation", 10)
    E: int = _f("federation", 20)
    B: int = _f("federation", 32)
    Q_s: int = _f("federation", 10)
    Q_c: int = _f("federation", 10)
    lr: float = _f("federation", 0.01)
    # [generation]
    weighting: str = _f("generation", "linear")
    covariance: str = _f("generation", "diag")
    gen_cap: int = _f("generation", 0)  # 0 means Q_s * B
    clamp_generated: bool = _f("generation", False)
    min_samples: int = _f("generation", 2)
    # [data]
    dataset: str = _f("data", "synthetic")
    num_classes: int = _f("data", 10)
    per_class: int = _f("data", 200)
    test_per_class: int = _f("data", 50)
    d_in: int = _f("data", 32)
    class_sep: float = _f("data", 4.0)
    train_images: str = _f("data", "")
    train_labels: str = _f("data", "")
    test_images: str = _f("data", "")
    test_labels: str = _f("data", "")
    train_subset: int = _f("data", 0)
    test_subset: int = _f("data", 0)
    partition: str = _f("data", "shard")
    shards: int = _f("data", 2)
    alpha: float = _f("data", 0.1)
    # [model]
    widths: Tuple[int, ...] = _f("model", (32, 64, 10))
    cut: int = _f("model", 1)
    # [latency]
    radius_km: float = _f("latency", 1.0)
    bandwidth_hz: float = _f("latency", 10e6)
    noise_dbm_hz: float = _f("latency", -174.0)
    tx_power_w: float = _f("latency", 0.2)
    flops_min: float = _f("latency", 1e9)
    flops_max: float = _f("latency", 1e10)
    homogeneous: bool = _f("latency", False)

    @property
    def weighting_fn(self) -> WeightingFn:
        return parse_weighting(self.weighting)

    @property
    def generation_enabled(self) -> bool:
        return self.mode == "gas"

    @property
    def effective_gen_cap(self) -> int:
        return self.gen_cap if self.gen_cap > 0 else self.Q_s * self.B

    @property
    def buffer_sizes(self) -> Tuple[int, int]:
        """(Q_s, Q_c) actually used; sync mode waits for every participant."""
        if self.mode == "sync":
            return self.C, self.C
        return self.Q_s, self.Q_c

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return validate(replace(self, **kw))

    def hash(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


_SECTIONS = {}
for _fld in fields(ExperimentConfig):
    _SECTIONS.setdefault(_fld.metadata["section"], []).append(_fld)
_BY_NAME = {f.name: f for f in fields(ExperimentConfig)}

_WEIGHTING_RE = re.compile(r"^(poly|exp)\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")


def parse_weighting(text: str) -> WeightingFn:
    text = text.strip()
    if text == "linear":
        return WeightingFn("linear")
    m = _WEIGHTING_RE.match(text)
    if not m:
        raise ValueError(f"weighting must be linear, poly(a,b) or exp(a,b), got {text!r}")
    return WeightingFn(m.group(1), float(m.group(2)), float(m.group(3)))


def _convert(fld, raw: str):
    typ = fld.type
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if fld.name == "widths":
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    return raw


def _format(fld, value) -> str:
    if fld.name == "widths":
        return ",".join(str(w) for w in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    values = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ParseError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ParseError("expected key = value", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        fld = _BY_NAME.get(key)
        if fld is None:
            raise ParseError("unknown key", line=lineno, field=key)
        if section is not None and fld.metadata["section"] != section:
            raise ParseError(f"key belongs to [{fld.metadata['section']}]", line=lineno, field=key)
        if key in values:
            raise ParseError("duplicate key", line=lineno, field=key)
        try:
            values[key] = _convert(fld, raw)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, field=key) from None
    for key, raw in (overrides or {}).items():
        fld = _BY_NAME.get(key)
        if fld is None:
            raise ParseError("unknown key", field=key)
        try:
            values[key] = raw if not isinstance(raw, str) else _convert(fld, raw)
        except ValueError as exc:
            raise ParseError(str(exc), field=key) from None
    return validate(ExperimentConfig(**values))


def parse_config(source=None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Parse a config file path (or ``None`` for defaults) plus flag overrides."""
    text = "" if source is None else Path(source).read_text()
    return parse_config_text(text, overrides)


def serialize(cfg: ExperimentConfig) -> str:
    lines = []
    for section, flds in _SECTIONS.items():
        lines.append(f"[{section}]")
        for fld in flds:
            lines.append(f"{fld.name} = {_format(fld, getattr(cfg, fld.name))}")
        lines.append("")
    return "\n".join(lines)


def _require(cond, message):
    if not cond:
        raise ValidationError(message)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _require(cfg.mode in MODES, f"mode must be one of {MODES}")
    _require(cfg.K >= 1, "K >= 1")
    _require(1 <= cfg.C <= cfg.K, "C <= K (and C >= 1)")
    _require(cfg.E >= 1, "E >= 1")
    _require(cfg.T >= 1, "T >= 1")
    _require(cfg.B >= 1, "B >= 1")
    _require(cfg.Q_s >= 1, "Q_s * B > 0")
    _require(1 <= cfg.Q_c <= cfg.C, "Q_c <= C (aggregation can complete)")
    _require(cfg.lr > 0, "lr > 0")
    _require(cfg.eval_every >= 1, "eval_every >= 1")
    _require(cfg.gen_cap >= 0, "gen_cap >= 0")
    _require(cfg.min_samples >= 1, "min_samples >= 1")
    _require(cfg.covariance in ("diag", "full"), "covariance is diag or full")
    try:
        parse_weighting(cfg.weighting)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    _require(len(cfg.widths) >= 3, "model needs at least two layers")
    _require(all(w >= 1 for w in cfg.widths), "layer widths must be positive")
    _require(0 < cfg.cut < len(cfg.widths) - 1, "cut must leave layers on both sides")
    _require(cfg.widths[-1] == cfg.num_classes, "last width must equal num_classes")
    if cfg.covariance == "full":
        _require(cfg.widths[cfg.cut] <= FULL_COV_MAX_DIM, f"full covariance needs cut width <= {FULL_COV_MAX_DIM}")
    _require(cfg.dataset in ("synthetic", "idx"), "dataset is synthetic or idx")
    if cfg.dataset == "synthetic":
        _require(cfg.widths[0] == cfg.d_in, "first width must equal d_in")
        _require(cfg.d_in >= cfg.num_classes, "synthetic data needs d_in >= num_classes")
        _require(cfg.per_class >= 1 and cfg.test_per_class >= 1, "per_class counts must be positive")
    else:
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            _require(bool(getattr(cfg, name)), f"idx dataset needs {name}")
    _require(cfg.partition in ("shard", "dirichlet"), "partition is shard or dirichlet")
    _require(cfg.shards >= 1, "shards >= 1")
    _require(cfg.alpha > 0, "alpha > 0")
    _require(cfg.radius_km > 0 and cfg.bandwidth_hz > 0 and cfg.tx_power_w > 0, "latency parameters must be positive")
    _require(0 < cfg.flops_min <= cfg.flops_max, "0 < flops_min <= flops_max")
    _require(cfg.probe_per_class >= 1, "probe_per_class >= 1")
    return cfg
