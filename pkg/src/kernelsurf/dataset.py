"""Dataset ingestion (manifest-driven disk layouts) and seeded synthetic
dataset generation for desk-scale verification."""

from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .classifier import ClassLibrary, SourceConfig, Trial
from .errors import ConfigError, DataError
from .sampling import DataStream, SamplingSpec, feasibility_issue
from .seeding import derive_rng

MANIFEST_NAME = "manifest.json"

# Material-category tags usable in manifests (meshes, stones, glossy, woods,
# rubbers, carpets, foams, plastics/papers, textiles).
CATEGORY_TAGS = ("M", "S", "G", "W", "R", "C", "F", "P", "T")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageSourceSpec:
    """Per-class base color plus pixel noise, quantized to the 8-bit grid."""

    name: str = "cam"
    width: int = 60
    height: int = 40
    pixel_noise: float = 0.08
    saturation: float = 0.55
    brightness: float = 0.65
    hsv: bool = True
    spatial_gaps: tuple[int, int] = (3, 3)


@dataclass(frozen=True)
class TemporalSourceSpec:
    """Per-class mean plus AR(1) noise; class index sets spread and memory."""

    name: str = "probe"
    rate: float = 1000.0
    length: int = 3000
    class_mean_step: float = 1.0
    base_sd: float = 0.18
    sd_growth: float = 1.06
    rho_min: float = 0.25
    rho_max: float = 0.7
    temporal_gap: int = 10
    cross_user: bool = True


@dataclass(frozen=True)
class SpectralSourceSpec:
    """Per-class tone set (bin-aligned) over a per-class noise floor.

    The floor carries most of the class signal: distribution-level
    comparisons respond to the magnitude body, while isolated tone peaks
    saturate the kernel and contribute little.
    """

    name: str = "vib"
    rate: float = 8000.0
    length: int = 8192
    frequency_cap: float = 3000.0
    tones_per_class: int = 3
    base_amplitude: float = 0.9
    amplitude_growth: float = 1.25
    tone_spacing_hz: float = 90.0
    tone_start_hz: float = 150.0
    noise_floor: float = 0.02
    noise_floor_growth: float = 1.12
    cross_user: bool = True


@dataclass(frozen=True)
class UserEffectSpec:
    """Additive offset and multiplicative gain per user on flagged sources.

    The mean shift neutralizes the offset exactly and the gain only
    partially, which is the asymmetry the compensation tests rely on.
    """

    offset_base: float = 1.0
    offset_step: float = 0.1
    gain_spread: float = 0.02


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale dataset: image + temporal + spectral sources, C classes."""

    classes: int = 10
    library_trials: int = 5
    test_trials: int = 20
    users: int = 5
    n: int = 200
    seed: int = 0
    image: ImageSourceSpec = field(default_factory=ImageSourceSpec)
    temporal: TemporalSourceSpec = field(default_factory=TemporalSourceSpec)
    spectral: SpectralSourceSpec = field(default_factory=SpectralSourceSpec)
    user_effect: UserEffectSpec = field(default_factory=UserEffectSpec)

    def __post_init__(self):
        if self.classes < 1:
            raise ConfigError("need at least one class")
        if self.library_trials < 1 or self.test_trials < 1:
            raise ConfigError("need at least one trial per class per split")
        if not 1 <= self.users <= self.test_trials:
            raise ConfigError("users must be between 1 and test_trials")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        for key, sub in (("image", ImageSourceSpec), ("temporal", TemporalSourceSpec),
                         ("spectral", SpectralSourceSpec), ("user_effect", UserEffectSpec)):
            if key in data and isinstance(data[key], dict):
                sub_data = dict(data[key])
                if "spatial_gaps" in sub_data:
                    sub_data["spatial_gaps"] = tuple(sub_data["spatial_gaps"])
                data[key] = sub(**sub_data)
        return cls(**data)


def _class_label(c: int) -> str:
    return f"class{c:02d}"


def _user_offset(spec: UserEffectSpec, u: int) -> float:
    sign = 1.0 if u % 2 == 0 else -1.0
    return sign * (spec.offset_base + spec.offset_step * u)


def _user_gain(spec: UserEffectSpec, u: int, users: int) -> float:
    if users == 1:
        return 1.0
    return 1.0 + spec.gain_spread * (2.0 * u / (users - 1) - 1.0)


def _gen_image(spec: SyntheticSpec, c: int, rng) -> DataStream:
    img = spec.image
    hue = (c + 0.5) / spec.classes
    base = colorsys.hsv_to_rgb(hue, img.saturation, img.brightness)
    data = np.array(base) + rng.normal(0.0, img.pixel_noise,
                                       size=(img.height, img.width, 3))
    data = np.clip(data, 0.0, 1.0)
    data = np.round(data * 255.0) / 255.0  # 8-bit grid: disk round-trips exactly
    return DataStream.image(data, name=img.name, value_range=(0.0, 1.0))


def _class_rho(spec: TemporalSourceSpec, c: int, classes: int) -> float:
    if classes == 1:
        return spec.rho_min
    return spec.rho_min + (spec.rho_max - spec.rho_min) * c / (classes - 1)


def _gen_temporal(spec: SyntheticSpec, c: int, rng) -> DataStream:
    ts = spec.temporal
    rho = _class_rho(ts, c, spec.classes)
    sd = ts.base_sd * ts.sd_growth ** c
    mean = ts.class_mean_step * c
    burn = 300
    innovations = rng.normal(0.0, sd * np.sqrt(1.0 - rho * rho), size=ts.length + burn)
    series = lfilter([1.0], [1.0, -rho], innovations)[burn:] + mean
    return DataStream.timeseries(series[None, :], ts.rate, name=ts.name)


def _class_tone_bins(spec: SpectralSourceSpec, c: int) -> np.ndarray:
    df = spec.rate / spec.length
    freqs = spec.tone_start_hz + spec.tone_spacing_hz * (
        spec.tones_per_class * c + np.arange(spec.tones_per_class))
    bins = np.round(freqs / df).astype(int)
    return np.unique(bins)


def _gen_spectral(spec: SyntheticSpec, c: int, rng) -> DataStream:
    sp = spec.spectral
    t = np.arange(sp.length)
    amp = sp.base_amplitude * sp.amplitude_growth ** c
    floor = sp.noise_floor * sp.noise_floor_growth ** c
    series = rng.normal(0.0, floor, size=sp.length)
    for k in _class_tone_bins(sp, c):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        series = series + amp * np.sin(2.0 * np.pi * k * t / sp.length + phase)
    return DataStream.timeseries(series[None, :], sp.rate, name=sp.name)


def _apply_user_effect(stream: DataStream, gain: float, offset: float) -> DataStream:
    return DataStream.timeseries(gain * stream.data + offset, stream.rate,
                                 name=stream.name, channel_names=stream.channel_names)


def synthetic_source_config(spec: SyntheticSpec) -> dict[str, SourceConfig]:
    img, ts, sp = spec.image, spec.temporal, spec.spectral
    return {
        img.name: SourceConfig(
            SamplingSpec("equidistant_spatial", spec.n, spatial_gaps=img.spatial_gaps),
            cross_user=False, hsv=img.hsv),
        ts.name: SourceConfig(
            SamplingSpec("equidistant_temporal", spec.n, temporal_gap=ts.temporal_gap),
            cross_user=ts.cross_user),
        sp.name: SourceConfig(
            SamplingSpec("random_spectral", spec.n, frequency_cap=sp.frequency_cap),
            cross_user=sp.cross_user),
    }


def test_user_of(index: int, total: int, users: int) -> int:
    """Contiguous-block user assignment for test trial ``index``."""
    return index * users // total


def generate_synthetic(spec: SyntheticSpec) -> tuple[ClassLibrary, list[Trial]]:
    """Deterministic synthetic dataset: same spec (seed included) -> same bits.

    Classes are separable by construction: distinct image hues, distinct
    temporal means and spreads, distinct tone amplitudes.  User effects
    (offset + gain) apply only to test-split trials on cross-user-flagged
    sources.
    """
    gens = [("image", _gen_image, spec.image), ("temporal", _gen_temporal, spec.temporal),
            ("spectral", _gen_spectral, spec.spectral)]
    classes: dict[str, list[Trial]] = {}
    tests: list[Trial] = []
    for c in range(spec.classes):
        label = _class_label(c)
        lib_trials = []
        for q in range(spec.library_trials):
            sources = {
                sub.name: gen(spec, c, derive_rng(spec.seed, 1, c, 0, q, s_idx))
                for s_idx, (_, gen, sub) in enumerate(gens)
            }
            lib_trials.append(Trial(f"lib{q:03d}", sources, label=label, user_id="expert"))
        classes[label] = lib_trials
        for i in range(spec.test_trials):
            u = test_user_of(i, spec.test_trials, spec.users)
            gain = _user_gain(spec.user_effect, u, spec.users)
            offset = _user_offset(spec.user_effect, u)
            sources = {}
            for s_idx, (kind, gen, sub) in enumerate(gens):
                stream = gen(spec, c, derive_rng(spec.seed, 1, c, 1, i, s_idx))
                if kind != "image" and sub.cross_user:
                    stream = _apply_user_effect(stream, gain, offset)
                sources[sub.name] = stream
            tests.append(Trial(f"test{c:02d}_{i:03d}", sources, label=label,
                               user_id=f"user{u}"))
    return ClassLibrary(classes, synthetic_source_config(spec)), tests


# ---------------------------------------------------------------------------
# Manifest-driven disk layout
# ---------------------------------------------------------------------------

@dataclass
class SourceDescriptor:
    """Where one source's files live and how to decode them."""

    name: str
    kind: str                      # image | timeseries
    pattern: str                   # format template: {split} {class} {trial} {user} {source}
    channels: int
    format: str                    # png | csv | npy
    rate: float | None = None
    value_range: tuple[float, float] = (0.0, 1.0)
    sampling: SamplingSpec | None = None
    cross_user: bool = False
    weight: float = 1.0
    shift_by_one: bool = False
    hsv: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling"] = asdict(self.sampling) if self.sampling else None
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SourceDescriptor":
        data = dict(data)
        samp = data.get("sampling")
        if samp is not None:
            samp = dict(samp)
            if samp.get("spatial_gaps") is not None:
                samp["spatial_gaps"] = tuple(samp["spatial_gaps"])
            data["sampling"] = SamplingSpec(**samp)
        if data.get("value_range") is not None:
            data["value_range"] = tuple(data["value_range"])
        return cls(**data)


@dataclass
class SplitSpec:
    trials_per_class: int
    user_by_trial: list[str]

    def __post_init__(self):
        if len(self.user_by_trial) != self.trials_per_class:
            raise ConfigError("user_by_trial must list one user per trial index")


@dataclass
class DatasetManifest:
    """Declarative binding of a directory tree to classes, trials, and sources."""

    name: str
    sources: list[SourceDescriptor]
    classes: list[dict]            # {"label": str, "category": tag}
    library: SplitSpec
    test: SplitSpec

    def __post_init__(self):
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ConfigError("source names must be unique")
        labels = [c["label"] for c in self.classes]
        if len(set(labels)) != len(labels):
            raise ConfigError("class labels must be unique")
        if not self.classes:
            raise ConfigError("manifest declares no classes")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sources": [s.to_dict() for s in self.sources],
            "classes": self.classes,
            "splits": {
                "library": asdict(self.library),
                "test": asdict(self.test),
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            name=data.get("name", "dataset"),
            sources=[SourceDescriptor.from_dict(s) for s in data["sources"]],
            classes=list(data["classes"]),
            library=SplitSpec(**data["splits"]["library"]),
            test=SplitSpec(**data["splits"]["test"]),
        )


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        return DatasetManifest.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {path} is malformed: {exc}") from exc


def _load_image(path: Path, desc: SourceDescriptor) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr / 255.0


def _load_series(path: Path, desc: SourceDescriptor) -> np.ndarray:
    if desc.format == "npy":
        arr = np.load(path)
    else:
        arr = np.loadtxt(path, ndmin=2).T
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _load_stream(root: Path, desc: SourceDescriptor, split: str, label: str,
                 trial: int, user: str) -> DataStream:
    rel = desc.pattern.format(split=split, **{"class": label}, trial=trial,
                              user=user, source=desc.name)
    path = root / rel
    if not path.exists():
        raise DataError(
            f"missing file for class {label!r} trial {trial} source {desc.name!r}: {path}"
        )
    try:
        if desc.kind == "image":
            data = _load_image(path, desc)
        else:
            data = _load_series(path, desc)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    got = data.shape[2] if desc.kind == "image" else data.shape[0]
    if got != desc.channels:
        raise DataError(
            f"{path}: expected {desc.channels} channels, got {got} "
            f"(class {label!r}, trial {trial}, source {desc.name!r})"
        )
    if desc.kind == "image":
        return DataStream.image(data, name=desc.name, value_range=(0.0, 1.0))
    return DataStream.timeseries(data, desc.rate, name=desc.name)


def _source_configs(manifest: DatasetManifest) -> dict[str, SourceConfig]:
    cfg = {}
    for desc in manifest.sources:
        if desc.sampling is None:
            raise ConfigError(f"source {desc.name!r} declares no sampling spec")
        cfg[desc.name] = SourceConfig(desc.sampling, cross_user=desc.cross_user,
                                      weight=desc.weight, shift_by_one=desc.shift_by_one,
                                      hsv=desc.hsv)
    return cfg


def load_dataset(manifest: DatasetManifest, root) -> tuple[ClassLibrary, list[Trial]]:
    """Materialize (library, test trials) from a manifest-described tree."""
    root = Path(root)
    classes: dict[str, list[Trial]] = {}
    tests: list[Trial] = []
    for entry in manifest.classes:
        label = entry["label"]
        lib_trials = []
        for q in range(manifest.library.trials_per_class):
            user = manifest.library.user_by_trial[q]
            sources = {
                d.name: _load_stream(root, d, "library", label, q, user)
                for d in manifest.sources
            }
            lib_trials.append(Trial(f"lib{q:03d}", sources, label=label, user_id=user))
        classes[label] = lib_trials
        for i in range(manifest.test.trials_per_class):
            user = manifest.test.user_by_trial[i]
            sources = {
                d.name: _load_stream(root, d, "test", label, i, user)
                for d in manifest.sources
            }
            tests.append(Trial(f"test_{label}_{i:03d}", sources, label=label, user_id=user))
    return ClassLibrary(classes, _source_configs(manifest)), tests


DEFAULT_PATTERN = "{split}/{class}/trial{trial:03d}_{user}/{source}.{ext}"
_EXT = {"png": "png", "csv": "csv", "npy": "npy"}


def _save_stream(root: Path, desc: SourceDescriptor, split: str, label: str,
                 trial: int, user: str, stream: DataStream) -> None:
    rel = desc.pattern.format(split=split, **{"class": label}, trial=trial,
                              user=user, source=desc.name)
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    if desc.kind == "image":
        from PIL import Image

        arr = np.round(stream.data * 255.0).astype(np.uint8)
        mode = "RGB" if arr.shape[2] == 3 else "L"
        Image.fromarray(arr.squeeze() if mode == "L" else arr, mode=mode).save(path)
    elif desc.format == "npy":
        np.save(path, stream.data)
    else:
        np.savetxt(path, stream.data.T, fmt="%.17g", delimiter=",")


def save_dataset(library: ClassLibrary, test_trials: list[Trial], out_dir,
                 name: str = "dataset") -> Path:
    """Write a dataset to disk in manifest layout; returns the manifest path.

    The written tree reloads bit-identically: images are already on the 8-bit
    grid and series are serialized at full float precision.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    any_class = next(iter(library.classes.values()))
    descriptors = []
    for src_name, scfg in library.source_config.items():
        stream = any_class[0].sources[src_name]
        fmt = "png" if stream.kind == "image" else "csv"
        descriptors.append(SourceDescriptor(
            name=src_name, kind=stream.kind,
            pattern=DEFAULT_PATTERN.replace("{ext}", _EXT[fmt]),
            channels=stream.channels, format=fmt, rate=stream.rate,
            sampling=scfg.sampling, cross_user=scfg.cross_user,
            weight=scfg.weight, shift_by_one=scfg.shift_by_one, hsv=scfg.hsv))

    lib_counts = {len(trials) for trials in library.classes.values()}
    if len(lib_counts) != 1:
        raise ConfigError("manifest layout needs a uniform library trial count per class")
    per_class_tests: dict[str, list[Trial]] = {}
    for trial in test_trials:
        per_class_tests.setdefault(trial.label, []).append(trial)
    test_counts = {len(v) for v in per_class_tests.values()}
    if len(test_counts) != 1:
        raise ConfigError("manifest layout needs a uniform test trial count per class")

    lib_users = [t.user_id for t in any_class]
    test_users = [t.user_id for t in next(iter(per_class_tests.values()))]
    manifest = DatasetManifest(
        name=name,
        sources=descriptors,
        classes=[{"label": label, "category": ""} for label in library.classes],
        library=SplitSpec(lib_counts.pop(), lib_users),
        test=SplitSpec(test_counts.pop(), test_users),
    )

    for label, trials in library.classes.items():
        for q, trial in enumerate(trials):
            for desc in descriptors:
                _save_stream(root, desc, "library", label, q,
                             manifest.library.user_by_trial[q], trial.sources[desc.name])
    for label, trials in per_class_tests.items():
        for i, trial in enumerate(trials):
            for desc in descriptors:
                _save_stream(root, desc, "test", label, i,
                             manifest.test.user_by_trial[i], trial.sources[desc.name])

    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n")
    return manifest_path


def validate_dataset(library: ClassLibrary, test_trials: list[Trial]) -> dict:
    """Report-only checks: sampling feasibility, constant streams, missing sources."""
    issues = []

    def check(trial: Trial, where: str):
        for name, scfg in library.source_config.items():
            stream = trial.sources.get(name)
            if stream is None:
                issues.append({"kind": "missing_source", "where": where,
                               "trial": trial.trial_id, "source": name})
                continue
            problem = feasibility_issue(stream, scfg.sampling)
            if problem:
                issues.append({"kind": "infeasible_sampling", "where": where,
                               "trial": trial.trial_id, "source": name,
                               "detail": problem})
            flat = stream.data.reshape(stream.channels, -1) if stream.kind == "timeseries" \
                else stream.data.reshape(-1, stream.channels).T
            if np.any(np.ptp(flat, axis=1) == 0.0):
                issues.append({"kind": "constant_stream", "where": where,
                               "trial": trial.trial_id, "source": name,
                               "detail": "at least one constant channel; "
                                         "kernel bandwidth will use the fallback"})

    for label, trials in library.classes.items():
        for trial in trials:
            check(trial, f"library/{label}")
    for trial in test_trials:
        check(trial, f"test/{trial.label}")

    errors = [i for i in issues if i["kind"] in ("missing_source", "infeasible_sampling")]
    return {
        "feasible": not errors,
        "issues": issues,
        "counts": {
            "classes": len(library.classes),
            "library_trials": sum(len(t) for t in library.classes.values()),
            "test_trials": len(test_trials),
            "sources": len(library.source_config),
        },
    }
