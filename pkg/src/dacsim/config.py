"""Experiment configuration: the dataclass, and the flat key=value file format.

A config file is plain text, one ``key = value`` per line, ``#`` comments
allowed. The full key set with defaults:

    protocol = dac            # dac | dac_var | random | pens | oracle | local
    seed = 1                  # required; drives every random choice downstream
    K = 100                   # number of clients; layout counts must sum to K
    shift = rotation          # rotation | label
    layout = 0:50, 180:50     # rotation: "degrees:count" entries
                              # label:    "0+1+2:60, 3+4:40" (class ids joined by +)
    T = 200                   # communication rounds
    E = 3                     # local epochs per round
    m = 5                     # peers sampled per round
    batch_size = 8
    learning_rate = 0.0003
    tau = 30                  # softmax temperature (dac)
    tau_max = 30              # sigmoid ceiling (dac_var)
    train_n = 400             # per-client split sizes
    val_n = 100
    test_n = 100
    input_dim = 2             # architecture of the shared classifier
    hidden_dim = 0            # 0 = softmax regression
    n_classes = 2
    pens_selection_rounds = 20
    pens_top_fraction = 0.5
    two_hop = true            # similarity estimation through intermediaries
    two_hop_rule = max        # max | min: how to pick the intermediary
    output_dir = results

Unknown keys are rejected (with a did-you-mean suggestion) and all problems
in a file are reported at once.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, fields
from pathlib import Path

from .datagen import ClusterLayout, ClusterSpec
from .errors import ConfigurationError
from .protocols import PROTOCOL_NAMES


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully declarative description of one run; the seed fixes everything."""

    protocol: str
    seed: int
    K: int
    layout: ClusterLayout
    shift: str = "rotation"
    T: int = 200
    E: int = 3
    m: int = 5
    batch_size: int = 8
    learning_rate: float = 3e-4
    tau: float = 30.0
    tau_max: float = 30.0
    train_n: int = 400
    val_n: int = 100
    test_n: int = 100
    input_dim: int = 2
    hidden_dim: int = 0
    n_classes: int = 2
    pens_selection_rounds: int = 20
    pens_top_fraction: float = 0.5
    two_hop: bool = True
    two_hop_rule: str = "max"
    output_dir: str = "results"

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems))

    def problems(self) -> list[str]:
        errs: list[str] = []
        if self.protocol not in PROTOCOL_NAMES:
            errs.append(f"unknown protocol {self.protocol!r}")
        if self.seed < 0:
            errs.append("seed must be >= 0")
        if self.K < 1:
            errs.append("K must be >= 1")
        if self.shift not in ("rotation", "label"):
            errs.append(f"shift must be rotation or label, got {self.shift!r}")
        elif self.layout.kind != self.shift:
            errs.append(
                f"layout entries are {self.layout.kind}-shift but shift = {self.shift}"
            )
        if self.layout.total_clients != self.K:
            errs.append(
                f"layout counts sum to {self.layout.total_clients}, K = {self.K}"
            )
        if self.shift == "label":
            for idx, spec in enumerate(self.layout.clusters):
                if spec.labels is not None and not spec.labels <= frozenset(
                    range(self.n_classes)
                ):
                    errs.append(
                        f"cluster {idx} label subset {sorted(spec.labels)} "
                        f"outside 0..{self.n_classes - 1}"
                    )
        if self.T < 1:
            errs.append("T must be >= 1")
        if self.E < 1:
            errs.append("E must be >= 1")
        if self.m < 1 and self.protocol != "local":
            errs.append("m must be >= 1 for communicating protocols")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            errs.append("learning_rate must be > 0")
        if self.tau <= 0.0:
            errs.append("tau must be > 0")
        if self.tau_max <= 0.0:
            errs.append("tau_max must be > 0")
        for name in ("train_n", "val_n", "test_n"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.input_dim < 2:
            errs.append("input_dim must be >= 2")
        if self.hidden_dim < 0:
            errs.append("hidden_dim must be >= 0")
        if self.n_classes < 2:
            errs.append("n_classes must be >= 2")
        if self.protocol == "pens":
            if not 1 <= self.pens_selection_rounds < self.T:
                errs.append("pens_selection_rounds must be in [1, T)")
            if not 0.0 < self.pens_top_fraction <= 1.0:
                errs.append("pens_top_fraction must be in (0, 1]")
        if self.two_hop_rule not in ("max", "min"):
            errs.append("two_hop_rule must be max or min")
        if not self.output_dir:
            errs.append("output_dir must be non-empty")
        return errs


_REQUIRED_KEYS = ("protocol", "seed", "K", "layout")
_BOOL_KEYS = {"two_hop"}
_INT_KEYS = {
    "seed", "K", "T", "E", "m", "batch_size", "train_n", "val_n", "test_n",
    "input_dim", "hidden_dim", "n_classes", "pens_selection_rounds",
}
_FLOAT_KEYS = {"learning_rate", "tau", "tau_max", "pens_top_fraction"}
_STR_KEYS = {"protocol", "shift", "two_hop_rule", "output_dir"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {"layout"}


def parse_layout(text: str, shift: str) -> ClusterLayout:
    """Parse the layout value: comma-separated ``shift:count`` entries."""
    clusters = []
    for raw_entry in text.split(","):
        entry = raw_entry.strip()
        if not entry:
            continue
        head, _, count_text = entry.rpartition(":")
        if not head:
            raise ConfigurationError(f"layout entry {entry!r} is missing ':count'")
        try:
            count = int(count_text)
        except ValueError:
            raise ConfigurationError(f"layout entry {entry!r}: bad count {count_text!r}")
        if shift == "label":
            try:
                labels = frozenset(int(c) for c in head.split("+"))
            except ValueError:
                raise ConfigurationError(f"layout entry {entry!r}: bad label subset")
            clusters.append(ClusterSpec(count=count, labels=labels))
        else:
            try:
                degrees = float(head)
            except ValueError:
                raise ConfigurationError(f"layout entry {entry!r}: bad rotation {head!r}")
            clusters.append(ClusterSpec(count=count, rotation=degrees))
    if not clusters:
        raise ConfigurationError("layout must contain at least one cluster entry")
    return ClusterLayout(tuple(clusters))


def format_layout(layout: ClusterLayout) -> str:
    parts = []
    for spec in layout.clusters:
        if spec.labels is not None:
            head = "+".join(str(c) for c in sorted(spec.labels))
        else:
            head = repr(spec.rotation)
        parts.append(f"{head}:{spec.count}")
    return ", ".join(parts)


def _parse_value(key: str, raw: str, errs: list[str]):
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        errs.append(f"{key}: expected true/false, got {raw!r}")
        return None
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            errs.append(f"{key}: expected an integer, got {raw!r}")
            return None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            errs.append(f"{key}: expected a number, got {raw!r}")
            return None
    return raw


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a config file; raises with every problem listed."""
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    errs: list[str] = []
    values: dict[str, object] = {}
    layout_text: str | None = None

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw_value = line.partition("=")
        key, raw_value = key.strip(), raw_value.strip()
        if not sep or not key:
            errs.append(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
            continue
        if key not in _ALL_KEYS:
            suggestion = difflib.get_close_matches(key, sorted(_ALL_KEYS), n=1)
            hint = f", did you mean {suggestion[0]!r}?" if suggestion else ""
            errs.append(f"line {lineno}: unknown key {key!r}{hint}")
            continue
        if key in values or (key == "layout" and layout_text is not None):
            errs.append(f"line {lineno}: duplicate key {key!r}")
            continue
        if key == "layout":
            layout_text = raw_value
            continue
        parsed = _parse_value(key, raw_value, errs)
        if parsed is not None:
            values[key] = parsed

    for key in _REQUIRED_KEYS:
        if key not in values and not (key == "layout" and layout_text is not None):
            errs.append(f"missing required key {key!r}")

    layout = None
    if layout_text is not None:
        shift = values.get("shift", "rotation")
        try:
            layout = parse_layout(layout_text, str(shift))
        except ConfigurationError as exc:
            errs.append(str(exc))

    if errs:
        raise ConfigurationError(f"{source}: " + "; ".join(errs))

    config = ExperimentConfig(layout=layout, **values)  # type: ignore[arg-type]
    problems = config.problems()
    if problems:
        raise ConfigurationError(f"{source}: " + "; ".join(problems))
    return config


def format_config(config: ExperimentConfig) -> str:
    """Render the fully-resolved config in the same key=value syntax it is parsed from."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.name == "layout":
            rendered = format_layout(value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"
