"""Pipeline configuration: a nested YAML document mapped onto dataclasses.

Unknown keys are rejected and every section is checked by building the
corresponding domain object before any run starts.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from . import coincidence, optics, shcompare, simulate
from .errors import ConfigError, QcpgmError


@dataclass
class SourceConfig:
    pump_wavelength: float = 405e-9
    pump_width: float = 0.5e-3
    crystal_length: float = 1.0e-3
    alpha: float = 0.455


@dataclass
class GeometryConfig:
    """FF optics given either by ``ff_focal_length`` or by ``ff_half_aperture`` (rad/m)."""

    camera_pixel_pitch: float = 55e-6
    nf_magnification: float = 10.0
    nf_pixels: int = 64
    ff_pixels: int = 64
    ff_half_aperture: float | None = 3.0e5
    ff_focal_length: float | None = None


@dataclass
class TargetConfig:
    """Target synthesis. ``height`` (m) with ``index`` overrides ``step_phase``."""

    kind: str = "star"
    shape: tuple = (400, 400)
    pitch: float = 1.1e-6
    step_phase: float = 1.0
    height: float | None = None
    index: float = 1.5
    n_spokes: int = 4
    radius: float | None = 160e-6
    edge_width: float = 3e-6
    bar_period: float = 2.76e-6
    n_bars: int = 3
    bar_length: float | None = None
    bump_width: float = 20e-6
    bump_height: float = 1.0
    gradient: tuple = (0.0, 0.0)
    n_cells: int = 3
    cell_radius: float = 40e-6
    absorption: float = 0.2
    seed: int = 0
    envelope_mode: str = "constant"


@dataclass
class DetectorConfig:
    efficiency_nf: float = 0.07
    efficiency_ff: float = 0.07
    time_quantum: float = 8.0
    jitter_sigma: float = 2.0
    rate_cap: float = 1e7


@dataclass
class AcquisitionConfig:
    pair_rate: float = 1e5
    acquisition_time: float = 1.0


@dataclass
class BackgroundConfig:
    enabled: bool = False
    in_reference: bool = False
    rate_fraction: float = 0.67
    reposition_period: float = 100.0
    spot_sigma_nf: float = 16.0
    spot_sigma_ff: float = 10.0
    center_spread_nf: float = 0.6
    center_spread_ff: float = 0.0


@dataclass
class CoincidenceConfig:
    window_ns: float = 20.0
    offset_ns: float = 0.0
    shift_ns: float = -50.0
    background_correction: bool = True
    histogram_bin_ns: float = 8.0
    histogram_range_ns: float = 200.0


@dataclass
class SeedConfig:
    measured: int = 1
    reference: int = 2
    background: int = 3


@dataclass
class EvaluateConfig:
    """Masks for phase-step scoring: an annulus (m) and a boundary erosion (px)."""

    erosion: int = 3
    region_inner: float | None = 50e-6
    region_outer: float | None = 145e-6


@dataclass
class CompareConfig:
    n_nf: int = 10
    field_width: float = 200e-6
    nf_correlation_width: float = 20e-6
    microlens_width: float = 20e-6
    photons: int = 100_000
    repeats: int = 200
    ff_pixel_counts: tuple = shcompare.DEFAULT_FF_PIXEL_COUNTS
    ground_truth_resolution: int = 200
    target: str = "two_bump"
    qcpgm_k_factor: float = 20.0
    sh_lobes: int = 9


@dataclass
class PipelineConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    coincidence: CoincidenceConfig = field(default_factory=CoincidenceConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    compare_sh: CompareConfig = field(default_factory=CompareConfig)
    output: str = "out"

    # -- domain objects ------------------------------------------------------

    def biphoton(self) -> optics.BiphotonParams:
        s = self.source
        return optics.make_biphoton_params(s.pump_wavelength, s.pump_width, s.crystal_length, s.alpha)

    def optical_geometry(self) -> optics.OpticalGeometry:
        g = self.geometry
        lam = self.biphoton().photon_wavelength
        if (g.ff_half_aperture is None) == (g.ff_focal_length is None):
            raise ConfigError("geometry: give exactly one of ff_half_aperture and ff_focal_length")
        if g.ff_focal_length is not None:
            return optics.OpticalGeometry(
                g.ff_focal_length, g.camera_pixel_pitch, g.nf_magnification, g.nf_pixels, g.ff_pixels, lam
            )
        return optics.OpticalGeometry.with_aperture(
            g.ff_half_aperture,
            camera_pixel_pitch=g.camera_pixel_pitch,
            nf_magnification=g.nf_magnification,
            nf_pixels=g.nf_pixels,
            ff_pixels=g.ff_pixels,
            photon_wavelength=lam,
        )

    def step_phase(self) -> float:
        t = self.target
        if t.height is None:
            return t.step_phase
        return optics.target_phase_from_height(t.height, t.index, self.biphoton().photon_wavelength)

    def _target_kwargs(self) -> dict:
        t = self.target
        return dict(
            step_phase=self.step_phase(),
            n_spokes=t.n_spokes,
            radius=t.radius,
            bar_period=t.bar_period,
            n_bars=t.n_bars,
            bar_length=t.bar_length,
            bump_width=t.bump_width,
            bump_height=t.bump_height,
            gradient=tuple(t.gradient),
            n_cells=t.n_cells,
            cell_radius=t.cell_radius,
            absorption=t.absorption,
            seed=t.seed,
        )

    def build_target(self) -> optics.ComplexTarget:
        t = self.target
        return optics.gen_target(t.kind, tuple(t.shape), t.pitch, edge_width=t.edge_width, **self._target_kwargs())

    def flat_target(self) -> optics.ComplexTarget:
        t = self.target
        return optics.gen_target("flat", tuple(t.shape), t.pitch)

    def truth_on_nf_grid(self) -> optics.ComplexTarget:
        """The target resampled with sharp edges on the NF pixel grid."""
        g = self.optical_geometry()
        n = g.nf_pixels
        return optics.gen_target(self.target.kind, (n, n), g.nf_pitch, **self._target_kwargs())

    def detector_model(self) -> simulate.DetectorModel:
        d = self.detector
        return simulate.DetectorModel(
            efficiency_nf=d.efficiency_nf,
            efficiency_ff=d.efficiency_ff,
            time_quantum=d.time_quantum,
            jitter_sigma=d.jitter_sigma,
            acquisition_time=self.acquisition.acquisition_time,
            rate_cap=d.rate_cap,
        )

    def background_model(self) -> simulate.BackgroundModel | None:
        b = self.background
        if not b.enabled:
            return None
        return simulate.BackgroundModel(
            rate_fraction=b.rate_fraction,
            reposition_period=b.reposition_period,
            spot_sigma_nf=b.spot_sigma_nf,
            spot_sigma_ff=b.spot_sigma_ff,
            center_spread_nf=b.center_spread_nf,
            center_spread_ff=b.center_spread_ff,
        )

    def window(self) -> coincidence.CoincidenceWindow:
        return coincidence.CoincidenceWindow(self.coincidence.offset_ns, self.coincidence.window_ns)

    def comparison(self) -> shcompare.ComparisonConfig:
        return shcompare.ComparisonConfig(**dataclasses.asdict(self.compare_sh))

    def validate(self) -> "PipelineConfig":
        """Build every domain object once so invalid values fail before a run."""
        try:
            if self.target.kind not in optics.TARGET_KINDS:
                raise ConfigError(f"target.kind must be one of {optics.TARGET_KINDS}")
            if self.target.envelope_mode not in optics.ENVELOPE_MODES:
                raise ConfigError(f"target.envelope_mode must be one of {optics.ENVELOPE_MODES}")
            if len(self.target.shape) != 2 or len(self.target.gradient) != 2:
                raise ConfigError("target.shape and target.gradient need two entries")
            self.biphoton()
            self.optical_geometry()
            self.detector_model()
            self.background_model()
            self.window()
            self.comparison()
            self.step_phase()
            if not self.acquisition.pair_rate >= 0:
                raise ConfigError("acquisition.pair_rate must be >= 0")
            if self.evaluate.erosion < 0:
                raise ConfigError("evaluate.erosion must be >= 0")
        except ConfigError:
            raise
        except (QcpgmError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, hint, where):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, where)
    try:
        if hint is bool:
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if hint is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError("expected an integer")
            return int(float(value))
        if hint is float:
            if isinstance(value, bool):
                raise TypeError("expected a number")
            # YAML reads exponents without a decimal point (1e-9) as strings
            return float(value)
        if hint is str:
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if hint is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            return tuple(float(v) if isinstance(v, str) else v for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc} (got {value!r})") from exc
    return value


def _build(cls, data, where=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data).validate()


def load_config(path) -> PipelineConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_dict(data or {})


def preset_names() -> list[str]:
    root = resources.files("qcpgm") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> PipelineConfig:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    text = (resources.files("qcpgm") / "presets" / f"{name}.yaml").read_text()
    return from_dict(yaml.safe_load(text) or {})


def dump_config(cfg: PipelineConfig) -> str:
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=True)
