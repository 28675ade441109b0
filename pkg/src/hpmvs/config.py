"""Run configuration: one flat record covering every stage of the
pipeline, with a text form that survives a parse/dump round trip
byte-for-byte.

The file format is one `key=value` per line, keys in fixed order, `#`
starting a comment line. Values are rendered with repr for floats so the
parsed number always dumps back to the same text.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError
from .hpm import HpmSchedule
from .patchmatch import PropagationConfig
from .prior import PriorConfig

__all__ = ["RunConfig", "dump_config", "parse_config", "ABLATION_ROWS",
           "row_config"]


@dataclass(frozen=True)
class RunConfig:
    """Everything a reconstruction run needs besides the scene itself."""

    # Propagation and matching.
    k: int = 4
    n_ext: int = 3
    tau_good: float = 0.8
    tau_bad: float = 1.2
    alpha: float = 90.0
    n_good: int = 1
    n_bad: int = 2
    radius: float = 4.0
    iterations: int = 3
    patch_radius: int = 5
    seed: int = 0
    # Planar prior.
    tau_cred: float = 0.1
    prior_k: int = 6
    eta: float = 0.2
    gamma: float = 0.1
    sigma_d: float = 0.02
    sigma_n: float = 0.25
    # Pyramid schedule and geometric consistency.
    scales: tuple = (4, 2, 1)
    gc_rounds: int = 2
    lambda_geom: float = 0.2
    psi: float = 3.0
    # Fusion.
    min_consistent: int = 2
    max_reproj: float = 2.0
    max_rel_depth_diff: float = 0.01
    max_normal_angle: float = 30.0
    # Pipeline toggles.
    use_nonlocal: bool = True
    use_extensible: bool = True
    use_prior: bool = True
    hpm_full: bool = True
    hpm_fast: bool = False
    # Execution.
    workers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales",
                           tuple(int(s) for s in self.scales))
        if self.hpm_full and self.hpm_fast:
            raise ValueError("hpm_full and hpm_fast are mutually exclusive")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        # Fail early rather than deep inside a run.
        self.propagation()
        if self.use_prior:
            self.prior()
        self.schedule()
        self.fusion()

    def propagation(self) -> PropagationConfig:
        cfg = PropagationConfig(
            k=self.k, n_ext=self.n_ext, tau_good=self.tau_good,
            tau_bad=self.tau_bad, alpha=self.alpha, n_good=self.n_good,
            n_bad=self.n_bad, radius=self.radius, iterations=self.iterations,
            patch_radius=self.patch_radius, seed=self.seed)
        if not self.use_nonlocal:
            cfg = cfg.without_nonlocal()
        if not self.use_extensible:
            cfg = cfg.without_extension()
        return cfg

    def prior(self) -> PriorConfig:
        return PriorConfig(tau_cred=self.tau_cred, k=self.prior_k,
                           eta=self.eta, gamma=self.gamma,
                           sigma_d=self.sigma_d, sigma_n=self.sigma_n)

    def schedule(self) -> HpmSchedule:
        if self.hpm_full:
            return HpmSchedule(scale_factors=self.scales, variant="full",
                               gc_rounds=self.gc_rounds,
                               lambda_geom=self.lambda_geom, psi=self.psi)
        if self.hpm_fast:
            return HpmSchedule(scale_factors=self.scales, variant="fast",
                               gc_rounds=self.gc_rounds,
                               lambda_geom=self.lambda_geom, psi=self.psi)
        # Neither pyramid variant: a single full-resolution prior pass.
        return HpmSchedule(scale_factors=(1,), variant="full",
                           gc_rounds=self.gc_rounds,
                           lambda_geom=self.lambda_geom, psi=self.psi)

    def fusion(self):
        from .fusion import FusionConfig
        return FusionConfig(min_consistent=self.min_consistent,
                            max_reproj=self.max_reproj,
                            max_rel_depth_diff=self.max_rel_depth_diff,
                            max_normal_angle=self.max_normal_angle)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_render(getattr(cfg, f.name))}"
             for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _parse_value(field, text, path, lineno):
    t = field.type
    try:
        if t == "bool" or t is bool:
            word = text.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[word]
        if t == "int" or t is int:
            return int(text)
        if t == "float" or t is float:
            return float(text)
        if t == "tuple" or t is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        raise ValueError(f"unsupported field type {t!r}")
    except ValueError as exc:
        raise FormatError(path, lineno, f"bad value for {field.name}: {exc}")


def parse_config(source) -> RunConfig:
    """Read a key=value config from a path or a text string."""
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        path = Path(source)
        text = path.read_text()
    else:
        path = "<config>"
        text = str(source)
    by_name = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(path, lineno, f"expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in by_name:
            raise FormatError(path, lineno, f"unknown key {key!r}")
        if key in values:
            raise FormatError(path, lineno, f"duplicate key {key!r}")
        values[key] = _parse_value(by_name[key], val.strip(), path, lineno)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc))


# Named pipeline configurations, matching the published ablation layout:
# non-local sampling, adaptive extension, and the planar prior toggled in
# the combinations worth comparing.
ABLATION_ROWS = {
    "NESP": dict(use_nonlocal=True, use_extensible=True, use_prior=False,
                 hpm_full=False, hpm_fast=False),
    "NESP+PA": dict(use_nonlocal=True, use_extensible=True, use_prior=True,
                    hpm_full=False, hpm_fast=False),
    "HPM": dict(use_nonlocal=False, use_extensible=False, use_prior=True,
                hpm_full=True, hpm_fast=False),
    "HPM_fast": dict(use_nonlocal=False, use_extensible=False,
                     use_prior=True, hpm_full=False, hpm_fast=True),
    "HPM-MVS": dict(use_nonlocal=True, use_extensible=True, use_prior=True,
                    hpm_full=True, hpm_fast=False),
    "HPM-MVS_fast": dict(use_nonlocal=True, use_extensible=True,
                         use_prior=True, hpm_full=False, hpm_fast=True),
}


def row_config(base: RunConfig, row: str) -> RunConfig:
    """The named ablation pipeline, derived from a base configuration."""
    if row not in ABLATION_ROWS:
        raise KeyError(row)
    return dataclasses.replace(base, **ABLATION_ROWS[row])
