"""Run configuration: a single YAML tree, overridable leaf by leaf.

Precedence, lowest to highest: built-in defaults, the config file,
``TDMFCC_``-prefixed environment variables (double underscore nests, e.g.
``TDMFCC_EXPERIMENT__N_SEEDS=3``), then ``--set dotted.path=value`` flags.
Override values are parsed as YAML scalars, so ``true``, ``null`` and
numbers arrive typed. Unknown keys anywhere in the tree are rejected —
a typo should fail loudly, not silently fall back to a default.

``config_hash()`` fingerprints the fully-resolved tree (canonical JSON,
SHA-256); every artifact the toolkit writes embeds it so outputs can be
traced back to the exact settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from . import dsp, esn
from .errors import ConfigError

SCHEMA_VERSION = 1
ENV_PREFIX = "TDMFCC_"


@dataclass
class DatasetSection:
    root: str = ""
    scheme: str = "fsdd"
    speakers: Optional[list[str]] = None
    max_clips_per_class: Optional[int] = None

    def __post_init__(self):
        if self.scheme not in ("fsdd", "audio_mnist"):
            raise ConfigError(f"dataset.scheme must be fsdd or audio_mnist, "
                              f"got {self.scheme!r}")
        if self.max_clips_per_class is not None and self.max_clips_per_class < 1:
            raise ConfigError("dataset.max_clips_per_class must be >= 1")


@dataclass
class FilterbankSection:
    n_filters: int = 25
    fmin_hz: float = 0.0
    fmax_hz: float = 4000.0
    n_coeffs: int = 14
    sample_rate_hz: int = 8000

    def __post_init__(self):
        if self.n_coeffs < 1:
            raise ConfigError("filterbank.n_coeffs must be >= 1")
        if not 1 <= self.n_coeffs <= self.n_filters:
            raise ConfigError("filterbank.n_coeffs must be <= n_filters")


@dataclass
class TdSection:
    n_channels: int = 10
    signal_len: int = 200
    pairs_csv: Optional[str] = None
    post_log: bool = False
    train_clips: int = 50
    holdback_fraction: float = 0.2

    def __post_init__(self):
        if self.n_channels < 1:
            raise ConfigError("td.n_channels must be >= 1")
        if self.signal_len < 2:
            raise ConfigError("td.signal_len must be >= 2")
        if self.train_clips < 1:
            raise ConfigError("td.train_clips must be >= 1")
        if not 0.0 < self.holdback_fraction < 1.0:
            raise ConfigError("td.holdback_fraction must be in (0, 1)")


@dataclass
class ReservoirSection:
    n_nodes: int
    connection_prob: float = 0.2
    spectral_radius: float = 0.95
    leak_rate: float = 0.3
    input_scale: float = 0.5
    bias_scale: float = 0.0
    washout: int = 50
    ridge_lambda: float = 1e-6

    def __post_init__(self):
        if self.washout < 0:
            raise ConfigError("reservoir washout must be >= 0")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")

    def to_esn_config(self, input_dim: int, seed: int) -> esn.EsnConfig:
        return esn.EsnConfig(
            n_nodes=self.n_nodes, input_dim=input_dim,
            connection_prob=self.connection_prob,
            spectral_radius_target=self.spectral_radius,
            leak_rate=self.leak_rate, input_scale=self.input_scale,
            bias_scale=self.bias_scale, seed=seed)


@dataclass
class ExperimentSection:
    experiment: str = "exp1"
    tasks: list[str] = field(default_factory=lambda: ["digit"])
    protocol: str = "holdout"
    n_folds: int = 5
    n_seeds: int = 10

    def __post_init__(self):
        if self.experiment not in ("exp1", "exp2"):
            raise ConfigError(f"experiment must be exp1 or exp2, "
                              f"got {self.experiment!r}")
        if not self.tasks:
            raise ConfigError("experiment.tasks must not be empty")
        bad = [t for t in self.tasks if t not in ("digit", "speaker")]
        if bad:
            raise ConfigError(f"unknown tasks {bad}; choose digit/speaker")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("experiment.tasks must not repeat")
        if self.protocol not in ("paper", "holdout"):
            raise ConfigError(f"protocol must be paper or holdout, "
                              f"got {self.protocol!r}")
        if self.n_folds < 2:
            raise ConfigError("experiment.n_folds must be >= 2")
        if self.n_seeds < 1:
            raise ConfigError("experiment.n_seeds must be >= 1")


_FRAME_DEFAULTS = dict(frame_len_ms=25.0, hop_ms=10.0, window="hamming",
                       n_fft=1024, pre_emphasis=0.97)


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    frame: dict = field(default_factory=lambda: dict(_FRAME_DEFAULTS))
    filterbank: FilterbankSection = field(default_factory=FilterbankSection)
    td: TdSection = field(default_factory=TdSection)
    esn1: ReservoirSection = field(default_factory=lambda: ReservoirSection(
        n_nodes=35, leak_rate=1.0))
    esn2: ReservoirSection = field(default_factory=lambda: ReservoirSection(
        n_nodes=400, leak_rate=0.3))
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output_dir: str = "out"
    global_seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported; "
                f"this build reads version {SCHEMA_VERSION}")
        # materialize early so bad frame settings fail at load time
        self.frame_config()

    def frame_config(self) -> dsp.FrameConfig:
        f = dict(_FRAME_DEFAULTS)
        f.update(self.frame)
        extra = set(f) - set(_FRAME_DEFAULTS)
        if extra:
            raise ConfigError(f"unknown frame keys: {sorted(extra)}")
        return dsp.FrameConfig(frame_len_ms=f["frame_len_ms"],
                               hop_ms=f["hop_ms"], window_kind=f["window"],
                               n_fft=f["n_fft"],
                               pre_emphasis=f["pre_emphasis"])

    def mel_filterbank(self, n_filters: Optional[int] = None) -> dsp.MelFilterbank:
        fb = self.filterbank
        return dsp.make_mel_filterbank(
            n_filters=fb.n_filters if n_filters is None else n_filters,
            n_fft=self.frame_config().n_fft, fmin_hz=fb.fmin_hz,
            fmax_hz=fb.fmax_hz, sample_rate_hz=fb.sample_rate_hz)

    def to_tree(self) -> dict:
        tree = {
            "schema_version": self.schema_version,
            "dataset": asdict(self.dataset),
            "frame": dict(_FRAME_DEFAULTS, **self.frame),
            "filterbank": asdict(self.filterbank),
            "td": asdict(self.td),
            "esn1": asdict(self.esn1),
            "esn2": asdict(self.esn2),
            "experiment": asdict(self.experiment),
            "output_dir": self.output_dir,
            "global_seed": self.global_seed,
        }
        return tree

    def config_hash(self) -> str:
        canon = json.dumps(self.to_tree(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


_SECTION_TYPES = {
    "dataset": DatasetSection,
    "filterbank": FilterbankSection,
    "td": TdSection,
    "esn1": ReservoirSection,
    "esn2": ReservoirSection,
    "experiment": ExperimentSection,
}
_SCALAR_KEYS = {"schema_version", "output_dir", "global_seed"}


def _build_section(name: str, cls, payload: dict, defaults: dict):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(payload)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def config_from_tree(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    known = set(_SECTION_TYPES) | _SCALAR_KEYS | {"frame"}
    unknown = set(tree) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    section_defaults = {
        "esn1": dict(n_nodes=35, leak_rate=1.0),
        "esn2": dict(n_nodes=400, leak_rate=0.3),
    }
    for name, cls in _SECTION_TYPES.items():
        if name in tree:
            kwargs[name] = _build_section(name, cls, tree[name],
                                          section_defaults.get(name, {}))
    if "frame" in tree:
        if not isinstance(tree["frame"], dict):
            raise ConfigError("section 'frame' must be a mapping")
        kwargs["frame"] = tree["frame"]
    for key in _SCALAR_KEYS:
        if key in tree:
            kwargs[key] = tree[key]
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


_SCI_NOTATION = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)[eE][+-]?\d+$")


def _coerce_numbers(node):
    # YAML 1.1 reads "1e-6" as a string (no dot before the exponent);
    # treat such leaves as the numbers they obviously are
    if isinstance(node, dict):
        return {k: _coerce_numbers(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_coerce_numbers(v) for v in node]
    if isinstance(node, str) and _SCI_NOTATION.match(node):
        return float(node)
    return node


def _parse_scalar(text: str):
    try:
        return _coerce_numbers(yaml.safe_load(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}: {exc}")


def _apply_override(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} treats a scalar as a section")
    node[parts[-1]] = value


def _env_overrides(env) -> list[tuple[str, object]]:
    out = []
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX) or key == ENV_PREFIX.rstrip("_"):
            continue
        dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
        out.append((dotted, _parse_scalar(env[key])))
    return out


def load_config(path=None, set_overrides=(), env=None) -> RunConfig:
    """Resolve file + environment + flag overrides into a RunConfig."""
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config root must be a mapping")
        tree = _coerce_numbers(loaded)
    env = os.environ if env is None else env
    for dotted, value in _env_overrides(env):
        _apply_override(tree, dotted, value)
    for item in set_overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects dotted.path=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        _apply_override(tree, dotted.strip(), _parse_scalar(raw))
    return config_from_tree(tree)
