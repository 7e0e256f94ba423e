"""Sample extraction from heterogeneous data streams.

Three strategies cover the three stream families: an equidistant pixel grid
on images, equidistant points on mean-carrying time series, and paired
random frequency-bin magnitudes on zero-mean vibration series.  Streams are
fed to the kernel estimators raw; no filtering or dimension reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .mmd import SampleSet

DEFAULT_INITIAL_WINDOW = 0.0115  # fraction of stream points eligible as start

STRATEGIES = ("equidistant_spatial", "equidistant_temporal", "random_spectral")


@dataclass
class DataStream:
    """One raw information-source recording: an image or a multichannel series.

    Image payload has shape (height, width, channels); time-series payload
    has shape (channels, length) with a sample rate in Hz.
    """

    kind: str
    data: np.ndarray
    rate: float | None = None
    channel_names: tuple[str, ...] = ()
    name: str = ""
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise InputError(f"stream {self.name!r} contains non-finite values")
        if self.kind == "image":
            if self.data.ndim == 2:
                self.data = self.data[:, :, None]
            if self.data.ndim != 3 or min(self.data.shape) < 1:
                raise InputError(f"image stream {self.name!r} must be (H, W, C) with positive dims")
        elif self.kind == "timeseries":
            if self.data.ndim == 1:
                self.data = self.data[None, :]
            if self.data.ndim != 2 or self.data.shape[0] < 1:
                raise InputError(f"timeseries stream {self.name!r} must be (channels, length)")
            if self.data.shape[1] < 2:
                raise InputError(f"timeseries stream {self.name!r} needs length >= 2")
            if self.rate is None or self.rate <= 0:
                raise InputError(f"timeseries stream {self.name!r} needs a positive rate")
        else:
            raise InputError(f"unknown stream kind {self.kind!r}")

    @classmethod
    def image(cls, data, name="", value_range=(0.0, 1.0), channel_names=()):
        return cls("image", data, None, tuple(channel_names), name, tuple(value_range))

    @classmethod
    def timeseries(cls, data, rate, name="", channel_names=()):
        return cls("timeseries", data, float(rate), tuple(channel_names), name)

    @property
    def channels(self) -> int:
        return self.data.shape[2] if self.kind == "image" else self.data.shape[0]

    @property
    def length(self) -> int:
        if self.kind != "timeseries":
            raise InputError("length applies to timeseries streams")
        return self.data.shape[1]


@dataclass(frozen=True)
class SamplingSpec:
    """How to extract one sample set from a stream of the matching kind."""

    strategy: str
    n: int
    temporal_gap: int | None = None       # samples; None = spread to cover broadly
    spatial_gaps: tuple[int, int] | None = None  # (d_a along width, d_b along height)
    frequency_cap: float | None = None    # Hz; spectral only
    initial_window: float = DEFAULT_INITIAL_WINDOW
    channel_mode: str = "stack"           # "stack": one point per location; "split": per channel

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown sampling strategy {self.strategy!r}")
        if self.n < 1:
            raise InputError("n must be >= 1")
        if not 0.0 <= self.initial_window < 1.0:
            raise InputError("initial_window must be a fraction in [0, 1)")
        if self.channel_mode not in ("stack", "split"):
            raise InputError(f"unknown channel_mode {self.channel_mode!r}")
        if self.temporal_gap is not None and self.temporal_gap < 1:
            raise InputError("temporal_gap must be >= 1 sample")
        if self.spatial_gaps is not None and min(self.spatial_gaps) < 1:
            raise InputError("spatial_gaps must be >= 1 pixel")


@dataclass
class Spectrum:
    """Per-channel DFT magnitudes on an ascending positive-frequency grid."""

    magnitudes: np.ndarray        # (channels, bins), nonnegative
    bin_frequencies: np.ndarray   # (bins,), Hz, ascending

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        self.bin_frequencies = np.asarray(self.bin_frequencies, dtype=np.float64)
        if self.magnitudes.ndim != 2:
            raise InputError("magnitudes must be (channels, bins)")
        if self.bin_frequencies.shape != (self.magnitudes.shape[1],):
            raise InputError("bin_frequencies must match magnitude bins")
        if np.any(self.magnitudes < 0):
            raise InputError("magnitudes must be nonnegative")
        if np.any(np.diff(self.bin_frequencies) <= 0):
            raise InputError("bin_frequencies must be strictly ascending")

    @property
    def bins(self) -> int:
        return self.bin_frequencies.shape[0]


def rgb_to_hsv(img: DataStream) -> DataStream:
    """Convert a 3-channel image stream to hue/saturation/value in [0, 1].

    Matches the stdlib colorsys convention, including achromatic pixels
    mapping to hue 0.
    """
    if img.kind != "image":
        raise InputError("rgb_to_hsv expects an image stream")
    if img.channels != 3:
        raise InputError(f"rgb_to_hsv needs 3 channels, got {img.channels}")
    lo, hi = img.value_range
    x = (img.data - lo) / (hi - lo)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    maxc = np.max(x, axis=-1)
    minc = np.min(x, axis=-1)
    delta = maxc - minc
    chromatic = delta > 0
    safe_delta = np.where(chromatic, delta, 1.0)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = np.select(
        [~chromatic, r == maxc, g == maxc],
        [0.0, bc - gc, 2.0 + rc - bc],
        default=4.0 + gc - rc,
    )
    h = (h / 6.0) % 1.0
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    hsv = np.stack([h, s, maxc], axis=-1)
    return DataStream.image(hsv, name=img.name, value_range=(0.0, 1.0),
                            channel_names=("h", "s", "v"))


def _fraction_to_start(fraction: float, max_start: int) -> int:
    return min(int(fraction * (max_start + 1)), max_start)


def _spatial_grid(img: DataStream, spec: SamplingSpec):
    """Grid shape and start windows for the equidistant pixel strategy.

    The grid shape balances the image aspect ratio so ``n`` points cover the
    image broadly; the randomized start stays within the initial-area
    fraction and keeps the whole grid in bounds.
    """
    if spec.spatial_gaps is None:
        raise InputError("equidistant_spatial requires spatial_gaps")
    d_a, d_b = spec.spatial_gaps
    height, width = img.data.shape[0], img.data.shape[1]
    cols_max = (width - 1) // d_a + 1
    rows_max = (height - 1) // d_b + 1
    if cols_max * rows_max < spec.n:
        raise InputError(
            f"grid does not fit stream {img.name!r}: max feasible n is "
            f"{cols_max * rows_max} for gaps ({d_a}, {d_b}) on {width}x{height}"
        )
    cols = math.ceil(math.sqrt(spec.n * width / height))
    cols = min(max(cols, math.ceil(spec.n / rows_max)), cols_max)
    rows = math.ceil(spec.n / cols)
    axis_frac = math.sqrt(spec.initial_window)
    a0_max = max(0, min(int(width * axis_frac), width - 1 - (cols - 1) * d_a))
    b0_max = max(0, min(int(height * axis_frac), height - 1 - (rows - 1) * d_b))
    return cols, rows, a0_max, b0_max


def _spatial_points(img: DataStream, spec: SamplingSpec, a0: int, b0: int) -> np.ndarray:
    cols, rows, _, _ = _spatial_grid(img, spec)
    d_a, d_b = spec.spatial_gaps
    cc = a0 + d_a * np.arange(cols)
    rr = b0 + d_b * np.arange(rows)
    flat = img.data[rr[:, None], cc[None, :], :].reshape(rows * cols, -1)
    return flat[: spec.n]


def equidistant_spatial(img: DataStream, spec: SamplingSpec,
                        rng: np.random.Generator | None = None,
                        *, start_fraction: tuple[float, float] | None = None) -> SampleSet:
    """Pixel grid sample: random start in the initial area, row-major order.

    Each point stacks all channels at one location.  Exactly ``spec.n``
    points, all in bounds, with pitch ``spatial_gaps``.
    """
    if img.kind != "image":
        raise InputError("equidistant_spatial expects an image stream")
    cols, rows, a0_max, b0_max = _spatial_grid(img, spec)
    if start_fraction is not None:
        ua, ub = start_fraction
        a0, b0 = _fraction_to_start(ua, a0_max), _fraction_to_start(ub, b0_max)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        a0 = int(rng.integers(0, a0_max + 1))
        b0 = int(rng.integers(0, b0_max + 1))
    return SampleSet(_spatial_points(img, spec, a0, b0),
                     source_id=img.name, domain_tag="spatial")


def _temporal_layout(ts: DataStream, spec: SamplingSpec):
    """Gap and start window for equidistant temporal extraction."""
    length = ts.length
    window = int(length * spec.initial_window)
    gap = spec.temporal_gap
    if gap is None:
        gap = max(1, (length - 1 - window) // max(spec.n - 1, 1))
    span = (spec.n - 1) * gap
    if span > length - 1:
        raise InputError(
            f"stream {ts.name!r} too short: {spec.n} points at gap {gap} "
            f"need {span + 1} samples, have {length}"
        )
    t0_max = max(0, min(window, length - 1 - span))
    return gap, t0_max


def _temporal_points(ts: DataStream, spec: SamplingSpec, gap: int, t0: int) -> np.ndarray:
    idx = t0 + gap * np.arange(spec.n)
    return ts.data[:, idx].T


def equidistant_temporal(ts: DataStream, spec: SamplingSpec,
                         rng: np.random.Generator | None = None,
                         *, start_fraction: float | None = None) -> SampleSet:
    """Fixed-gap temporal sample from a random start in the initial window."""
    if ts.kind != "timeseries":
        raise InputError("equidistant_temporal expects a timeseries stream")
    gap, t0_max = _temporal_layout(ts, spec)
    if start_fraction is not None:
        t0 = _fraction_to_start(start_fraction, t0_max)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        t0 = int(rng.integers(0, t0_max + 1))
    return SampleSet(_temporal_points(ts, spec, gap, t0),
                     source_id=ts.name, domain_tag="temporal")


def spectral_magnitudes(ts: DataStream, frequency_cap: float) -> Spectrum:
    """Per-channel DFT magnitude spectrum restricted to (0, frequency_cap].

    The DC bin is excluded: these sources are routed to the frequency domain
    precisely because their mean carries no class information.
    """
    if ts.kind != "timeseries":
        raise InputError("spectral_magnitudes expects a timeseries stream")
    nyquist = ts.rate / 2.0
    if frequency_cap is None or frequency_cap <= 0:
        raise InputError("frequency_cap must be positive")
    if frequency_cap > nyquist:
        raise InputError(f"frequency_cap {frequency_cap} Hz exceeds Nyquist {nyquist} Hz")
    mags = np.abs(np.fft.rfft(ts.data, axis=1))
    freqs = np.fft.rfftfreq(ts.length, 1.0 / ts.rate)
    keep = (freqs > 0) & (freqs <= frequency_cap)
    return Spectrum(mags[:, keep], freqs[keep])


def random_spectral_pair(spec_y: Spectrum, spec_z: Spectrum, n: int,
                         rng: np.random.Generator) -> tuple[SampleSet, SampleSet]:
    """Paired magnitude samples at n unique, shared random frequency bins."""
    if spec_y.bins != spec_z.bins or not np.array_equal(
            spec_y.bin_frequencies, spec_z.bin_frequencies):
        raise InputError("spectra do not share a bin grid")
    if n > spec_y.bins:
        raise InputError(f"requested {n} bins but only {spec_y.bins} available")
    idx = rng.choice(spec_y.bins, size=n, replace=False)
    return (
        SampleSet(spec_y.magnitudes[:, idx].T, domain_tag="spectral"),
        SampleSet(spec_z.magnitudes[:, idx].T, domain_tag="spectral"),
    )


def cross_user_shift(y, z):
    """Translate the test-side sample set so its coordinate means match the
    library side: z* = z + (mean(y) - mean(z)).

    A pure translation: every central moment of order >= 2 is preserved, so
    the subsequent kernel comparison sees only non-mean differences.
    """
    from .kernels import as_points

    y_pts = as_points(y, "y")
    z_pts = as_points(z, "z")
    if y_pts.shape[1] != z_pts.shape[1]:
        raise InputError(f"dimension mismatch: {y_pts.shape[1]} vs {z_pts.shape[1]}")
    shifted = z_pts + (y_pts.mean(axis=0) - z_pts.mean(axis=0))
    if isinstance(z, SampleSet):
        return SampleSet(shifted, source_id=z.source_id, domain_tag=z.domain_tag)
    return shifted


@dataclass
class PreparedStream:
    """A stream readied for repeated drawing: HSV/DFT work done once.

    ``points`` holds the drawable values as contiguous (location, channel)
    rows so each draw is a single row gather; ``base_idx`` is the draw
    template at start 0, shifted per draw by the randomized start.
    """

    kind: str                       # "image" | "series" | "spectrum"
    stream: DataStream | None
    spectrum: Spectrum | None = None
    points: np.ndarray | None = None
    base_idx: np.ndarray | None = None
    start_max: tuple[int, ...] = ()


def prepare_stream(stream: DataStream, spec: SamplingSpec, hsv: bool = False) -> PreparedStream:
    """Do the per-stream preprocessing shared by all draws against it."""
    if spec.strategy == "equidistant_spatial":
        if stream.kind != "image":
            raise InputError(f"spatial sampling needs an image stream, got {stream.kind}")
        img = rgb_to_hsv(stream) if hsv else stream
        cols, rows, a0_max, b0_max = _spatial_grid(img, spec)
        d_a, d_b = spec.spatial_gaps
        width = img.data.shape[1]
        base = ((d_b * np.arange(rows) * width)[:, None]
                + d_a * np.arange(cols)[None, :]).ravel()[: spec.n]
        flat = np.ascontiguousarray(img.data.reshape(-1, img.data.shape[2]))
        return PreparedStream("image", img, points=flat, base_idx=base,
                              start_max=(a0_max, b0_max, width))
    if stream.kind != "timeseries":
        raise InputError(f"{spec.strategy} needs a timeseries stream, got {stream.kind}")
    if spec.strategy == "equidistant_temporal":
        gap, t0_max = _temporal_layout(stream, spec)
        return PreparedStream("series", stream,
                              points=np.ascontiguousarray(stream.data.T),
                              base_idx=gap * np.arange(spec.n),
                              start_max=(t0_max,))
    spectrum = spectral_magnitudes(stream, spec.frequency_cap)
    if spec.n > spectrum.bins:
        raise InputError(
            f"stream {stream.name!r}: {spec.n} bins requested, {spectrum.bins} available"
        )
    return PreparedStream("spectrum", stream, spectrum,
                          points=np.ascontiguousarray(spectrum.magnitudes.T))


def draw_pair(prep_y: PreparedStream, prep_z: PreparedStream,
              spec: SamplingSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one matched sample-set pair (as raw point arrays) for an MMD run.

    Equidistant strategies share the randomized start between the two
    streams (identical streams then yield identical draws); the spectral
    strategy shares the frequency-bin draw by construction.
    """
    if spec.strategy == "equidistant_spatial":
        ua, ub = rng.random(2)
        y = _draw_spatial(prep_y, spec, ua, ub)
        z = _draw_spatial(prep_z, spec, ua, ub)
        return y, z
    if spec.strategy == "equidistant_temporal":
        u = rng.random()
        return (_draw_temporal(prep_y, spec, u), _draw_temporal(prep_z, spec, u))
    sy, sz = prep_y.spectrum, prep_z.spectrum
    if not np.array_equal(sy.bin_frequencies, sz.bin_frequencies):
        raise InputError("spectra do not share a bin grid")
    idx = rng.choice(sy.bins, size=spec.n, replace=False)
    return prep_y.points[idx], prep_z.points[idx]


def _draw_spatial(prep: PreparedStream, spec: SamplingSpec, ua: float, ub: float) -> np.ndarray:
    a0_max, b0_max, width = prep.start_max
    a0 = _fraction_to_start(ua, a0_max)
    b0 = _fraction_to_start(ub, b0_max)
    return prep.points[prep.base_idx + (b0 * width + a0)]


def _draw_temporal(prep: PreparedStream, spec: SamplingSpec, u: float) -> np.ndarray:
    t0 = _fraction_to_start(u, prep.start_max[0])
    return prep.points[prep.base_idx + t0]


def feasibility_issue(stream: DataStream, spec: SamplingSpec) -> str | None:
    """Report why a spec cannot draw from a stream, or None if it can."""
    try:
        prepare_stream(stream, spec)
    except InputError as exc:
        return str(exc)
    return None
