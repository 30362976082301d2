"""Versioned JSON scenario configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import Anchor, InterferenceSource, Reflector, Scene, TagPlacement
from .rfmodel import THERMAL_NOISE_DBM_HZ, LinkBudget
from .sweep import SweepPlan
from .waveform import PREFERRED_PAIR_6, TagConfig, gold_code, pn_sequence

SCHEMA_VERSION = 1
PRESETS = ("room3d", "hallway", "multitag", "empty")


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class RecoveryParams:
    nominal_f: float = 256.0
    span_ppm: float = 500.0
    step_ppm: float = 5.0
    coarse_step_ppm: float | None = 25.0
    refine: bool = True
    n_phases: int = 8
    cutoff_hz: float = 50.0
    zero_pad_factor: int = 10
    threshold_fraction: float = 0.30

    def violations(self) -> list[str]:
        out = []
        if not self.span_ppm >= self.step_ppm > 0:
            out.append("recovery: need span_ppm >= step_ppm > 0")
        if self.coarse_step_ppm is not None and not self.coarse_step_ppm >= self.step_ppm:
            out.append("recovery: coarse_step_ppm must be >= step_ppm")
        if self.n_phases < 1:
            out.append("recovery: n_phases must be >= 1")
        if not self.cutoff_hz > 0:
            out.append("recovery: cutoff_hz must be > 0")
        if self.zero_pad_factor < 1:
            out.append("recovery: zero_pad_factor must be >= 1")
        if not 0 < self.threshold_fraction < 1:
            out.append("recovery: threshold_fraction must lie in (0, 1)")
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed for a deterministic end-to-end run.

    ``tag_positions`` lists independent location fixes of the first tag
    template; when empty, the tags of ``scene`` are located in place.
    When ``randomize_clocks`` is set each fix draws the tag frequency
    offset and start phase from the root seed.
    """

    scene: Scene
    sweep: SweepPlan
    recovery: RecoveryParams = field(default_factory=RecoveryParams)
    pairs: tuple = ()
    room: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    tag_positions: tuple = ()
    seed: int = 0
    randomize_clocks: bool = True
    inject_clock_offsets: bool = True
    name: str = ""

    def violations(self) -> list[str]:
        out = list(self.scene.violations()) + list(self.sweep.violations())
        out += self.recovery.violations()
        ids = {a.id for a in self.scene.anchors}
        for tx, rx in self.pairs:
            for a in (tx, rx):
                if a not in ids:
                    out.append(f"pair references unknown anchor {a!r}")
        if self.recovery.cutoff_hz >= self.sweep.snapshot_rate / 2:
            out.append("recovery: cutoff_hz must be below Nyquist")
        if not 0 <= self.seed < 2 ** 64:
            out.append("seed must be a u64")
        if self.tag_positions and not self.scene.tags:
            out.append("tag_positions given but the scene has no tag template")
        return out


def sub_seed(root: int, *path: int) -> int:
    """Child seed for a stage: ``SeedSequence([root, *path])`` folded to u64."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1, np.uint64)[0])


def parse_code(spec) -> tuple:
    """Chip sequence from a list of +-1 or a name.

    Names: ``uncoded``, ``mseq6a`` / ``mseq6b`` (the preferred degree-6
    pair), ``gold:<shift>``, ``pn:<register bits>``.
    """
    if spec is None or spec == "uncoded":
        return (1,)
    if isinstance(spec, (list, tuple)):
        return tuple(int(c) for c in spec)
    if spec == "mseq6a":
        return tuple(int(c) for c in pn_sequence(6, 1, PREFERRED_PAIR_6[0]))
    if spec == "mseq6b":
        return tuple(int(c) for c in pn_sequence(6, 1, PREFERRED_PAIR_6[1]))
    if isinstance(spec, str) and spec.startswith("gold:"):
        return tuple(int(c) for c in gold_code(int(spec[5:])))
    if isinstance(spec, str) and spec.startswith("pn:"):
        return tuple(int(c) for c in pn_sequence(int(spec[3:])))
    raise ValueError(f"unknown code {spec!r}")


def _take(d: dict, cls, where: str, errors: list, **conv):
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in d.items():
        if k not in names:
            errors.append(f"{where}: unknown field {k!r}")
            continue
        kw[k] = conv[k](v) if k in conv else v
    return kw


def _tuple3(v):
    return tuple(float(x) for x in v)


def from_dict(doc: dict) -> ScenarioConfig:
    """Build and validate a config; raises :class:`ConfigError` listing every
    violation."""
    errors: list[str] = []
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION} (got {version!r})")
    known = {"schema_version", "name", "seed", "room", "anchors", "reflectors", "tags",
             "tag_positions", "interference", "noise", "budget", "sweep", "recovery",
             "pairs", "randomize_clocks", "inject_clock_offsets", "frontend", "comment"}
    for k in doc:
        if k not in known:
            errors.append(f"unknown top-level field {k!r}")

    def build(label, fn):
        try:
            return fn()
        except (TypeError, ValueError, KeyError) as e:
            errors.append(f"{label}: {e}")
            return None

    budget = build("budget", lambda: LinkBudget(**_take(doc.get("budget", {}), LinkBudget,
                                                         "budget", errors)))
    anchors = []
    for i, a in enumerate(doc.get("anchors", [])):
        conv = {k: _tuple3 for k in ("position", "tx_offset", "rx_offset")}
        anchors.append(build(f"anchors[{i}]", lambda a=a: Anchor(**_take(a, Anchor, "anchor",
                                                                         errors, **conv))))
    if not anchors:
        errors.append("at least one anchor is required")
    reflectors = [build(f"reflectors[{i}]", lambda r=r: Reflector(
        **_take(r, Reflector, "reflector", errors, position=_tuple3)))
        for i, r in enumerate(doc.get("reflectors", []))]
    tags = []
    for i, t in enumerate(doc.get("tags", [])):
        def mk(t=t):
            t = dict(t)
            pos = _tuple3(t.pop("position"))
            t["code"] = parse_code(t.get("code"))
            return TagPlacement(TagConfig(**_take(t, TagConfig, "tag", errors)), pos)
        tags.append(build(f"tags[{i}]", mk))
    interference = [build(f"interference[{i}]", lambda s=s: InterferenceSource(
        **_take(s, InterferenceSource, "interference", errors,
                lines=lambda v: tuple(tuple(x) for x in v),
                amplitude_db=lambda v: -math.inf if v in ("-inf", None) else float(v))))
        for i, s in enumerate(doc.get("interference", []))]
    noise = doc.get("noise", {})
    frontend = doc.get("frontend", {})
    sweep = build("sweep", lambda: SweepPlan(**_take(doc.get("sweep", {}), SweepPlan,
                                                       "sweep", errors)))
    recovery = build("recovery", lambda: RecoveryParams(**_take(doc.get("recovery", {}),
                                                                RecoveryParams, "recovery",
                                                                errors)))
    if None in anchors + reflectors + tags + interference or None in (budget, sweep, recovery):
        raise ConfigError(errors)
    scene = Scene(tuple(anchors), tuple(reflectors), tuple(tags), tuple(interference),
                  float(noise.get("temperature_noise_floor", THERMAL_NOISE_DBM_HZ)), budget,
                  noise.get("reflection_model", "antipodal"),
                  float(frontend.get("ripple_db", 0.0)), int(frontend.get("seed", 0)))
    pairs = doc.get("pairs", "all")
    if pairs == "all":
        ids = [a.id for a in anchors]
        pairs = [(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids))]
    room = doc.get("room")
    if room is None:
        pts = np.array([a.position for a in anchors])
        room = (pts.min(axis=0) - 1.0, pts.max(axis=0) + 1.0)
    else:
        room = (room["min"], room["max"])
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append("seed must be an integer")
        seed = 0
    cfg = ScenarioConfig(scene, sweep, recovery, tuple(tuple(p) for p in pairs),
                         (_tuple3(room[0]), _tuple3(room[1])),
                         tuple(_tuple3(p) for p in doc.get("tag_positions", [])), seed,
                         bool(doc.get("randomize_clocks", True)),
                         bool(doc.get("inject_clock_offsets", True)), str(doc.get("name", "")))
    errors += cfg.violations()
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: invalid JSON ({e})"]) from None
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return from_dict(doc)


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("uwbscatter.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def load_preset(name: str, **overrides) -> ScenarioConfig:
    """Named preset with optional top-level or ``section.field`` overrides."""
    doc = preset_dict(name)
    for key, value in overrides.items():
        section, _, leaf = key.partition("__")
        if leaf:
            doc.setdefault(section, {})[leaf] = value
        else:
            doc[section] = value
    return from_dict(doc)
