"""Flat ``key=value`` run configuration with layered resolution.

Resolution order is defaults < config file < command-line flags. Unknown
keys and unparsable values are errors. :func:`format_config` renders a
resolved configuration in the same format, so the echo is itself a valid
config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .ablation import AblationSpec
from .adversary import AttackConfig
from .filters import FUSION_MODES, FilterConfig


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional(parse: Callable[[str], Any], none_word: str = "auto"):
    def inner(text: str):
        return None if text.strip().lower() in (none_word, "") else parse(text)

    return inner


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _choice(*options: str):
    def inner(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return inner


def _path(text: str) -> str | None:
    return text.strip() or None


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    none_text: str = ""


_F = FilterConfig()
_A = AttackConfig()
_S = AblationSpec()

KEYS: tuple[Key, ...] = (
    Key("seed", int, 7, "global seed for synthetic data, attack targets and probes"),
    # filter
    Key("filter_method", _choice("smart", "classic"), "smart", "smart (SMART-VMF) or classic vector median"),
    Key("scales", _int_list, _F.scales, "comma-separated odd window sides"),
    Key("sigma_c", float, _F.sigma_c, "content falloff"),
    Key("sigma_p", _optional(float), _F.sigma_p, "spatial falloff in pixels (auto = half the window side)", "auto"),
    Key("lambda", float, _F.lam, "attention weight"),
    Key("tau", float, _F.tau, "fusion temperature"),
    Key("max_iters", int, _F.max_iters, "Weiszfeld iterations"),
    Key("epsilon", float, _F.epsilon, "distance floor"),
    Key("use_content", _bool, _F.use_content, "content-similarity weighting"),
    Key("use_spatial", _bool, _F.use_spatial, "spatial falloff weighting"),
    Key("use_attention", _bool, _F.use_attention, "attention weighting"),
    Key("fusion_mode", _choice(*FUSION_MODES), _F.fusion_mode, "reliability, mean or uniform"),
    Key("vmf_side", int, 3, "window side of the classic vector median filter"),
    Key("attention", _path, None, "attention map (PGM)"),
    # ablation
    Key("ablation_kind", _choice("band", "block"), _S.kind, "band or block"),
    Key("ablation_size", _optional(int), _S.size, "retained band width / block side (auto = ceil(w/8))", "auto"),
    Key("ablation_stride", int, _S.stride, "ablation position stride"),
    Key("ablation_fill", float, _S.fill, "fill value outside the retained region"),
    # attack
    Key("target_class", int, _A.target_class, "attack target class"),
    Key("target_prob", float, _A.target_prob, "stop once the target probability reaches this"),
    Key("attack_step", float, _A.step, "patch update step size"),
    Key("attack_iters", int, _A.max_iters, "maximum patch update iterations"),
    Key("area_fraction", float, _A.area_fraction, "area of each patch as a fraction of the image"),
    Key("n_patches", int, _A.n_patches, "number of corner patches (1..4)"),
    Key("alg1_literal_sign", _bool, not _A.ascent, "flip the patch update to descend the target margin"),
    Key("competitor", _choice("live", "source"), _A.competitor, "suppressed class: live runner-up or clean prediction"),
    # model / data
    Key("model", _path, None, "reference model file (trained from synthetic data when empty)"),
    Key("classes", int, 4, "synthetic classes"),
    Key("per_class", int, 25, "synthetic images per class"),
    Key("height", int, 32, "synthetic image height"),
    Key("width", int, 32, "synthetic image width"),
    Key("epochs", int, 20000, "reference model training epochs"),
    Key("lr", float, 0.1, "reference model learning rate"),
    Key("pool_factor", int, 4, "reference model pooling factor"),
    # evaluation
    Key("label", _optional(int, ""), None, "true class for evaluate"),
    Key("defense", _choice("none", "classic-vmf", "smoothed-only", "filtered"), "filtered", "defense for evaluate"),
    Key("defenses", str, "none,classic-vmf,smoothed-only,filtered", "comma-separated defenses for sweep"),
    Key("attacks", str, "0x0,1x1,2x1,1x2,3x1,1x3,4x1,1x4", "comma-separated NxPCT attack cells for sweep"),
    Key("dump", _path, None, "directory for intermediate artifacts"),
)
KEY_INDEX = {k.name: k for k in KEYS}


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def filter_config(self) -> FilterConfig:
        v = self.values
        return FilterConfig(
            scales=v["scales"],
            sigma_c=v["sigma_c"],
            sigma_p=v["sigma_p"],
            lam=v["lambda"],
            tau=v["tau"],
            max_iters=v["max_iters"],
            epsilon=v["epsilon"],
            use_content=v["use_content"],
            use_spatial=v["use_spatial"],
            use_attention=v["use_attention"],
            fusion_mode=v["fusion_mode"],
        )

    def ablation_spec(self) -> AblationSpec:
        v = self.values
        return AblationSpec(v["ablation_kind"], v["ablation_size"], v["ablation_stride"], v["ablation_fill"])

    def attack_config(self) -> AttackConfig:
        v = self.values
        return AttackConfig(
            target_class=v["target_class"],
            target_prob=v["target_prob"],
            step=v["attack_step"],
            max_iters=v["attack_iters"],
            area_fraction=v["area_fraction"],
            n_patches=v["n_patches"],
            ascent=not v["alg1_literal_sign"],
            competitor=v["competitor"],
        )

    def attack_grid(self) -> list[tuple[int, int]]:
        cells = []
        for token in self.values["attacks"].split(","):
            token = token.strip()
            if not token:
                continue
            n, _, pct = token.partition("x")
            cells.append((int(n), int(pct)))
        return cells

    def defense_list(self) -> list[str]:
        return [d.strip() for d in self.values["defenses"].split(",") if d.strip()]


def parse_text(text: str, source: str = "config") -> dict[str, str]:
    """Split ``key=value`` lines; ``#`` starts a comment. Returns raw strings."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key, f"{source}:{lineno}: expected key=value")
        if key not in KEY_INDEX:
            raise ConfigError(key, f"{source}:{lineno}: unknown key")
        raw[key] = value.strip()
    return raw


def _convert(key: str, text: str):
    spec = KEY_INDEX.get(key)
    if spec is None:
        raise ConfigError(key, "unknown key")
    try:
        return spec.parse(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(key, f"invalid value {text!r} ({exc})") from None


def parse_config(
    text: str = "",
    overrides: dict[str, Any] | None = None,
    command: str = "filter",
    inputs: list[str] | None = None,
) -> RunConfig:
    """Resolve defaults < ``text`` < ``overrides``.

    Override values may be raw strings (parsed like file values) or already
    typed Python values.
    """
    values = {k.name: k.default for k in KEYS}
    for key, raw in parse_text(text).items():
        values[key] = _convert(key, raw)
    for key, val in (overrides or {}).items():
        if key not in KEY_INDEX:
            raise ConfigError(key, "unknown key")
        values[key] = _convert(key, val) if isinstance(val, str) else val
    cfg = RunConfig(command, values, list(inputs or []))
    # surface invalid combinations before any work starts
    for build in (cfg.filter_config, cfg.ablation_spec, cfg.attack_config):
        try:
            build()
        except ValueError as exc:
            raise ConfigError(None, str(exc)) from None
    try:
        cfg.attack_grid()
    except ValueError:
        raise ConfigError("attacks", f"invalid attack grid {values['attacks']!r}") from None
    return cfg


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k.name}={_render(cfg.values[k.name])}\n" for k in KEYS)
