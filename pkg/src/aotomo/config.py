"""Pipeline configuration in a flat ``section.key = value`` text format.

Grammar
-------
* One ``key = value`` pair per line; blank lines and lines starting with
  ``#`` are ignored, as is anything after a ``#`` in a value.
* Keys are dotted names from the table in :data:`SCHEMA` or the indexed
  inclusion keys ``phantom.inclusion.<k>.<field>``.
* Values are integers, floats, booleans (``true``/``false``), bare strings,
  ``none``, or comma-separated float lists.
* ``phantom.preset`` (``vessel``, ``disc`` or ``none``) fills the phantom
  section before the explicit keys are applied; it is never written back.

Floats are written with ``repr`` so ``parse(dump(c))`` reproduces every
value bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .acoustics import AcousticConfig
from .errors import AdmissibilityError
from .fluence import SIDES, BoundaryData
from .grid import Grid
from .phantom import AbsorptionSpec, Inclusion, disc_phantom, vessel_phantom
from .reconstruct import ReconstructConfig


class ConfigError(ValueError):
    """Malformed or inadmissible configuration; the message names the key."""


@dataclass(frozen=True)
class AcousticSettings:
    eta: float = 0.02
    n_centers: int = 128
    n_radii: int = 96
    r_max: Optional[float] = None
    r_start: Optional[float] = None
    fold_policy: str = "degree"
    model: str = "physical"  # "physical" sweeps a_v, "ideal" the first-order surrogate

    def build(self, spec: AbsorptionSpec, n_threads: int = 1) -> AcousticConfig:
        return AcousticConfig.on_circle(
            self.eta, n_centers=self.n_centers, n_radii=self.n_radii, r_max=self.r_max,
            center=spec.support_center, radius=spec.support_radius, r_start=self.r_start,
            fold_policy=self.fold_policy, n_threads=n_threads,
        )


@dataclass(frozen=True)
class InversionSettings:
    reg: float = 1e-6
    n_theta: int = 720
    maxiter: int = 1000
    offsets: bool = True


@dataclass(frozen=True)
class BoundarySettings:
    l: float = 0.1
    g: float = 1.0
    g_sides: Optional[Dict[str, tuple]] = None

    def build(self) -> BoundaryData:
        if self.g_sides is not None:
            return BoundaryData(self.l, {s: np.asarray(v, dtype=float) for s, v in self.g_sides.items()})
        return BoundaryData(self.l, self.g)


@dataclass(frozen=True)
class PipelineConfig:
    grid: Grid = field(default_factory=lambda: Grid(256, 160))
    phantom: AbsorptionSpec = field(default_factory=vessel_phantom)
    boundary: BoundarySettings = field(default_factory=BoundarySettings)
    acoustics: AcousticSettings = field(default_factory=AcousticSettings)
    inversion: InversionSettings = field(default_factory=InversionSettings)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    seed: int = 0

    def validate(self) -> None:
        """Check cross-section consistency; raises :class:`ConfigError`."""
        p, r = self.phantom, self.reconstruct
        for name in ("a0", "a_lower", "a_upper"):
            if getattr(p, name) != getattr(r, name):
                raise ConfigError(f"reconstruct.{name} ({getattr(r, name)}) differs from phantom.{name} ({getattr(p, name)})")
        try:
            bc = self.boundary.build()
            bc.side_values(self.grid)
            self.acoustics.build(p)
            p.support_mask(self.grid)
        except (AdmissibilityError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.acoustics.model not in ("physical", "ideal"):
            raise ConfigError(f"acoustics.model must be 'physical' or 'ideal', got {self.acoustics.model!r}")
        if 2 * max(self.grid.hx, self.grid.hy) > self.acoustics.eta:
            raise ConfigError(
                f"acoustics.eta ({self.acoustics.eta}) must be at least twice the grid spacing "
                f"({max(self.grid.hx, self.grid.hy):.4g}) to resolve the displacement"
            )


SCHEMA = {
    "grid.nx": int, "grid.ny": int, "grid.lx": float, "grid.ly": float,
    "phantom.a0": float, "phantom.a_lower": float, "phantom.a_upper": float,
    "phantom.support_center": "pair", "phantom.support_radius": float, "phantom.margin": float,
    "boundary.l": float, "boundary.g": float,
    **{f"boundary.g.{s}": "list" for s in SIDES},
    "acoustics.eta": float, "acoustics.n_centers": int, "acoustics.n_radii": int,
    "acoustics.r_max": "optfloat", "acoustics.r_start": "optfloat",
    "acoustics.fold_policy": str, "acoustics.model": str,
    "inversion.reg": float, "inversion.n_theta": int, "inversion.maxiter": int, "inversion.offsets": bool,
    "reconstruct.a0": float, "reconstruct.a_lower": float, "reconstruct.a_upper": float,
    "reconstruct.max_iters": int, "reconstruct.fp_tol": float, "reconstruct.elliptic_tol": float,
    "reconstruct.fluence_tol": float, "reconstruct.boundary_mode": str,
    "seed": int,
}

INCLUSION_SCHEMA = {
    "shape": str, "value": float, "center": "pair", "radius": float, "vertices": "list",
    "path": str, "value_min": float, "value_max": float, "extent": "optlist",
}


def _convert(key: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        if kind == "optfloat":
            return None if text.lower() == "none" else float(text)
        if kind in ("list", "pair", "optlist"):
            if kind == "optlist" and text.lower() == "none":
                return None
            vals = tuple(float(v) for v in text.split(",") if v.strip())
            if kind == "pair" and len(vals) != 2:
                raise ValueError("expected two comma-separated numbers")
            return vals
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None
    raise ConfigError(f"{key}: unknown value kind")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list, np.ndarray)):
        return ", ".join(repr(float(v)) for v in np.ravel(value))
    return str(value)


def _preset(name: str) -> AbsorptionSpec:
    name = name.strip().lower()
    if name == "vessel":
        return vessel_phantom()
    if name == "disc":
        return disc_phantom(0.5, center=(0.9, 0.55), radius=0.12)
    if name == "none":
        return AbsorptionSpec()
    raise ConfigError(f"phantom.preset: unknown preset {name!r} (vessel, disc, none)")


def _inclusion(k: int, fields: dict) -> Inclusion:
    shape = fields.get("shape")
    try:
        if shape == "disc":
            return Inclusion.disc(fields["center"], fields["radius"], fields["value"])
        if shape == "polygon":
            v = fields["vertices"]
            if len(v) % 2:
                raise ConfigError(f"phantom.inclusion.{k}.vertices: odd number of coordinates")
            return Inclusion.polygon(list(zip(v[0::2], v[1::2])), fields["value"])
        if shape == "image":
            return Inclusion.image(fields["path"], fields["value_min"], fields["value_max"], fields.get("extent"))
    except KeyError as exc:
        raise ConfigError(f"phantom.inclusion.{k}: missing field {exc.args[0]!r}") from None
    raise ConfigError(f"phantom.inclusion.{k}.shape: unknown shape {shape!r}")


def parse_config(text: str) -> PipelineConfig:
    """Parse the key-value text; unspecified keys keep their defaults."""
    values: Dict[str, object] = {}
    inclusions: Dict[int, dict] = {}
    preset = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "phantom.preset":
            preset = _preset(val)
        elif key.startswith("phantom.inclusion."):
            parts = key.split(".")
            if len(parts) != 4 or not parts[2].isdigit() or parts[3] not in INCLUSION_SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            inclusions.setdefault(int(parts[2]), {})[parts[3]] = _convert(key, INCLUSION_SCHEMA[parts[3]], val)
        elif key in SCHEMA:
            values[key] = _convert(key, SCHEMA[key], val)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return _build(values, inclusions, preset)


def _section(values, prefix):
    return {k[len(prefix) + 1:]: v for k, v in values.items() if k.startswith(prefix + ".") and k.count(".") == 1}


def _build(values, inclusions, preset) -> PipelineConfig:
    base = PipelineConfig.__dataclass_fields__
    try:
        grid = Grid(**{**dataclasses.asdict(base["grid"].default_factory()), **_section(values, "grid")})
        spec0 = preset if preset is not None else base["phantom"].default_factory()
        incs = spec0.inclusions
        if inclusions:
            incs = tuple(_inclusion(k, inclusions[k]) for k in sorted(inclusions))
        pfields = {f.name: getattr(spec0, f.name) for f in dataclasses.fields(AbsorptionSpec)}
        pfields.update(_section(values, "phantom"))
        pfields["inclusions"] = incs
        phantom = AbsorptionSpec(**pfields)
        sides = {s: values[f"boundary.g.{s}"] for s in SIDES if f"boundary.g.{s}" in values}
        if sides and len(sides) != len(SIDES):
            raise ConfigError(f"boundary.g.<side>: all of {SIDES} are needed, got {sorted(sides)}")
        boundary = BoundarySettings(**_section(values, "boundary"), g_sides=sides or None)
        acoustics = AcousticSettings(**_section(values, "acoustics"))
        inversion = InversionSettings(**_section(values, "inversion"))
        # reconstruct bounds follow the phantom unless set explicitly
        rfields = {"a0": phantom.a0, "a_lower": phantom.a_lower, "a_upper": phantom.a_upper}
        rfields.update(_section(values, "reconstruct"))
        reconstruct = ReconstructConfig(**rfields)
        cfg = PipelineConfig(grid, phantom, boundary, acoustics, inversion, reconstruct, values.get("seed", 0))
    except AdmissibilityError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """Serialise every setting, inclusions expanded, in a stable order."""
    out = []
    for name in ("nx", "ny", "lx", "ly"):
        out.append((f"grid.{name}", getattr(cfg.grid, name)))
    p = cfg.phantom
    for name in ("a0", "a_lower", "a_upper", "support_center", "support_radius", "margin"):
        out.append((f"phantom.{name}", getattr(p, name)))
    for k, inc in enumerate(p.inclusions):
        pre = f"phantom.inclusion.{k}"
        out.append((f"{pre}.shape", inc.shape))
        if inc.shape == "disc":
            out += [(f"{pre}.center", inc.center), (f"{pre}.radius", inc.radius), (f"{pre}.value", inc.value)]
        elif inc.shape == "polygon":
            out += [(f"{pre}.vertices", inc.vertices), (f"{pre}.value", inc.value)]
        else:
            out += [(f"{pre}.path", inc.path), (f"{pre}.value_min", inc.value_min),
                    (f"{pre}.value_max", inc.value_max), (f"{pre}.extent", inc.extent)]
    b = cfg.boundary
    out.append(("boundary.l", b.l))
    if b.g_sides is not None:
        out += [(f"boundary.g.{s}", b.g_sides[s]) for s in SIDES]
    else:
        out.append(("boundary.g", b.g))
    for sect, obj in (("acoustics", cfg.acoustics), ("inversion", cfg.inversion), ("reconstruct", cfg.reconstruct)):
        for f in dataclasses.fields(obj):
            out.append((f"{sect}.{f.name}", getattr(obj, f.name)))
    out.append(("seed", cfg.seed))
    return "".join(f"{k} = {_format(v)}\n" for k, v in out)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
