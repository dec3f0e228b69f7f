"""Pipeline configuration: nested defaults, a flat key=value file format,
named presets, and the config hash that chains artifacts together.

File format: one `section.key = value` per line, `#` comments. Values parse
as int, float, bool, a comma list of those, or a bare string. Example:

    env.width = 9
    env.n_agents = 3
    metric.steps = 4000
    seeds = 0,1,2,3

Presets are addressed as `preset:<name>` wherever a config path is accepted.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .grid import TYPE_FULL, TYPE_X_ONLY, GridSpec
from .macdec import DownstreamConfig
from .metric import MetricConfig
from .fermat import FermatConfig
from .options import OptionConfig


@dataclass
class EnvConfig:
    width: int = 7
    height: int = 7
    n_agents: int = 3
    agent_types: list[int] = field(default_factory=list)
    apples: list[list[int]] = field(default_factory=list)  # [x, y] pairs
    forced_coop: bool = True
    walls: list[list[int]] = field(default_factory=list)
    horizon: int = 60

    def spec(self, seed: int = 0, with_apples: bool = True) -> GridSpec:
        apples = tuple(
            ((int(x), int(y)), self.n_agents if self.forced_coop else 1)
            for x, y in (self.apples if with_apples else [])
        )
        return GridSpec(
            width=self.width,
            height=self.height,
            n_agents=self.n_agents,
            agent_types=tuple(self.agent_types),
            apples=apples,
            forced_coop=self.forced_coop and bool(apples),
            walls=frozenset((int(x), int(y)) for x, y in self.walls),
            horizon=self.horizon,
            seed=seed,
        )


@dataclass
class PipelineConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    dataset_size: int = 50_000
    metric: MetricConfig = field(default_factory=MetricConfig)
    fermat: FermatConfig = field(default_factory=FermatConfig)
    option: OptionConfig = field(default_factory=OptionConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    k_eigenvectors: int = 5          # non-trivial eigenvectors kept
    quantization: float = 1.0
    graph_mode: str = "relative"     # "relative" | "relative-scalar" | "raw"
    symmetrize_graph: bool = False   # mirror edges through the x<->y exchange
    option_horizon: int = 400        # env horizon while training options
    raw_probe_nodes: int = 2500      # node cap for the raw-joint contrast basis
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    conditioning: list[list[list[int]]] = field(
        default_factory=lambda: [[[1, 4], [1, 7]], [[7, 7], [7, 8]]]
    )

    def validate(self) -> None:
        if self.k_eigenvectors < 1:
            raise ConfigError("k_eigenvectors must be >= 1")
        if self.quantization <= 0:
            raise ConfigError("quantization grain must be positive")
        if self.graph_mode not in ("relative", "relative-scalar", "raw"):
            raise ConfigError(f"unknown graph_mode {self.graph_mode!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        self.env.spec()


def to_flat_dict(cfg, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(to_flat_dict(v, prefix=key + "."))
        else:
            out[key] = v
    return out


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(to_flat_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# fields each stage actually consumes; a stage's artifact embeds the hash of
# exactly these, so editing a later stage's budget never invalidates earlier
# artifacts while lineage stays exact through upstream self-hashes
_STAGE_FIELDS = {
    "dataset": ["env.", "dataset_size"],
    "metric": ["env.", "dataset_size", "metric."],
    "fermat": ["env.", "dataset_size", "metric.", "fermat."],
    "basis": ["env.", "dataset_size", "metric.", "fermat.",
              "k_eigenvectors", "quantization", "graph_mode", "symmetrize_graph",
              "raw_probe_nodes"],
    "options": ["env.", "dataset_size", "metric.", "fermat.",
                "k_eigenvectors", "quantization", "graph_mode", "symmetrize_graph",
                "raw_probe_nodes", "option.", "option_horizon"],
    "report": ["env.", "downstream.", "seeds"],
}
_STAGE_FIELDS["sweep"] = _STAGE_FIELDS["report"]
_STAGE_FIELDS["responsiveness"] = _STAGE_FIELDS["basis"] + ["conditioning"]


def stage_hash(cfg: PipelineConfig, stage: str) -> str:
    prefixes = _STAGE_FIELDS[stage]
    flat = to_flat_dict(cfg)
    sub = {k: v for k, v in flat.items()
           if any(k == p or k.startswith(p) for p in prefixes)}
    blob = json.dumps(sub, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_value(text: str):
    """Grammar: `|` splits groups, `;` splits items, `,` splits scalars."""
    text = text.strip()
    if text == "":
        return []
    if "|" in text:
        return [_parse_value(t) for t in text.split("|") if t.strip() != ""]
    if ";" in text:
        return [_parse_value(t) for t in text.split(";") if t.strip() != ""]
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip() != ""]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _assign(cfg, dotted: str, value) -> None:
    parts = dotted.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(f"unknown config section {p!r} in {dotted!r}")
        obj = getattr(obj, p)
    name = parts[-1]
    if not hasattr(obj, name):
        raise ConfigError(f"unknown config key {dotted!r}")
    current = getattr(obj, name)
    if isinstance(current, list) and not isinstance(value, list):
        value = [value]
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{dotted} expects a boolean")
    if isinstance(current, float) and isinstance(value, int):
        value = float(value)
    setattr(obj, name, value)


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base if base is not None else PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        _assign(cfg, key.strip(), _parse_value(value))
    cfg.validate()
    return cfg


def format_config(cfg: PipelineConfig) -> str:
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(to_flat_dict(cfg).items())]
    return "\n".join(lines) + "\n"


def _format_value(v, depth: int = 0) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        if not v:
            return ""
        sep = [",", ";", "|"][_depth_of(v) - 1]
        parts = [_format_value(x) for x in v]
        # singleton inner groups keep their separator so depth survives parsing
        if len(parts) == 1 and _depth_of(v) > 1:
            return parts[0] + sep
        return sep.join(parts)
    return str(v)


def _depth_of(v) -> int:
    if not isinstance(v, list) or not v:
        return 0
    return 1 + max(_depth_of(x) for x in v)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def preset_default_7x7() -> PipelineConfig:
    """Forced-coop foraging on 7x7 with 3 agents and 2 apples."""
    cfg = PipelineConfig()
    cfg.env = EnvConfig(width=7, height=7, n_agents=3, apples=[[1, 1], [5, 5]],
                        forced_coop=True, horizon=60)
    cfg.dataset_size = 20_000
    cfg.metric = MetricConfig(steps=4000, batch=256)
    cfg.fermat = FermatConfig(steps=8000)
    cfg.option = OptionConfig(steps=60_000, state_mode="relative")
    cfg.downstream = DownstreamConfig(steps=150_000, eval_every=30_000)
    cfg.k_eigenvectors = 5
    cfg.seeds = list(range(10))
    return cfg


def preset_fig_15x15_3ag() -> PipelineConfig:
    """15x15 empty grid, 3 agents: eigenvector heatmaps and responsiveness."""
    cfg = PipelineConfig()
    cfg.env = EnvConfig(width=15, height=15, n_agents=3, apples=[], forced_coop=False,
                        horizon=80)
    cfg.dataset_size = 40_000
    cfg.metric = MetricConfig(steps=4000, batch=256)
    cfg.fermat = FermatConfig(steps=8000)
    cfg.option = OptionConfig(steps=120_000, state_mode="relative", offset_clip=14)
    cfg.k_eigenvectors = 5
    cfg.symmetrize_graph = True
    cfg.seeds = [0]
    cfg.conditioning = [[[1, 4], [1, 7]], [[7, 7], [7, 8]]]
    return cfg


def preset_fig_15x15_4ag() -> PipelineConfig:
    """15x15 empty grid, 4 agents: option alignment rollouts."""
    cfg = preset_fig_15x15_3ag()
    cfg.env.n_agents = 4
    cfg.dataset_size = 50_000
    cfg.option = OptionConfig(steps=300_000, state_mode="relative", offset_clip=14,
                              eps_final=0.03)
    cfg.k_eigenvectors = 3
    return cfg


def preset_hetero_2ag() -> PipelineConfig:
    """10x10 grid, one x-only agent and one full agent."""
    cfg = PipelineConfig()
    cfg.env = EnvConfig(width=10, height=10, n_agents=2,
                        agent_types=[TYPE_X_ONLY, TYPE_FULL], apples=[],
                        forced_coop=False, horizon=80)
    cfg.dataset_size = 30_000
    cfg.metric = MetricConfig(steps=4000, batch=256)
    cfg.fermat = FermatConfig(steps=8000)
    cfg.option = OptionConfig(steps=80_000, state_mode="relative", offset_clip=9)
    cfg.k_eigenvectors = 4
    cfg.seeds = [0]
    cfg.conditioning = [[[2, 3]], [[7, 6]]]
    return cfg


def preset_hetero_3ag() -> PipelineConfig:
    """15x15 grid, one x-only agent and two full agents."""
    cfg = PipelineConfig()
    cfg.env = EnvConfig(width=15, height=15, n_agents=3,
                        agent_types=[TYPE_X_ONLY, TYPE_FULL, TYPE_FULL], apples=[],
                        forced_coop=False, horizon=80)
    cfg.dataset_size = 40_000
    cfg.metric = MetricConfig(steps=4000, batch=256)
    cfg.fermat = FermatConfig(steps=8000)
    cfg.option = OptionConfig(steps=120_000, state_mode="relative", offset_clip=14)
    cfg.k_eigenvectors = 4
    cfg.seeds = [0]
    cfg.conditioning = [[[2, 3], [11, 12]], [[7, 6], [6, 7]]]
    return cfg


PRESETS = {
    "default-7x7": preset_default_7x7,
    "fig-15x15-3ag": preset_fig_15x15_3ag,
    "fig-15x15-4ag": preset_fig_15x15_4ag,
    "hetero-2ag": preset_hetero_2ag,
    "hetero-3ag": preset_hetero_3ag,
}


def load_config(path_or_preset: str) -> PipelineConfig:
    if path_or_preset.startswith("preset:"):
        name = path_or_preset.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
        cfg = PRESETS[name]()
        cfg.validate()
        return cfg
    try:
        with open(path_or_preset) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path_or_preset}")
    return parse_config_text(text)
