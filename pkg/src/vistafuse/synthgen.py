"""Procedural paired visuotactile data.

Each specimen is a micro height field (µm heights on a regular lattice).
Both modalities derive from it: images are point-sampled shaded renders at a
camera pixel pitch coarse enough to alias the finest groove periods, and
tactile sweeps are 6-channel time series from a simulated whisker dragged
across the field.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .dataset_io import (
    ManifestRecord,
    TactileSweep,
    TextureImage,
    bilinear_sample,
    save_image,
    save_manifest,
    save_sweep_csv,
)
from .errors import ParameterError

MILLING_TYPES = ("H", "V", "T")

# groove period ladder (µm), coarse to fine; the two finest sit below the
# 2 x 32.44 µm sampling limit of the default render pitch and alias into the
# coarse band (24.3 -> ~97 µm, 12.9 -> ~65 µm moire), so a camera sees a
# plausible-looking coarse grating where the surface is actually fine
DEFAULT_PERIODS_UM = (240.0, 160.0, 96.0, 64.0, 24.3, 12.9)
AMPLITUDE_PER_PERIOD = 0.05  # groove depth scales with pitch, Ra-style
NOMINAL_PIXEL_PITCH = (32.44, 35.97)  # µm/px along (length, width)

DEFAULT_SWEEP_SPEED = 50.0  # mm/min
DEFAULT_SAMPLE_SPACING_UM = 14.0
DEFAULT_SWEEP_SAMPLES = 500
DEFAULT_SWEEP_ANGLE = np.deg2rad(28.0)  # oblique so one sweep crosses both groove axes

_PRESSURE_GAINS = (0.3, 0.3, 1.0)


@dataclass
class SurfaceSpec:
    """Ground-truth description of one synthetic specimen."""

    milling: str  # H | V | T
    granularity_index: int  # 0 (coarsest) .. 5 (finest)
    period_um: float
    amplitude_um: float
    noise_level: float
    seed: int

    @property
    def class_id(self):
        return 6 * MILLING_TYPES.index(self.milling) + self.granularity_index

    @property
    def class_name(self):
        return f"{self.milling}-{self.granularity_index}"


def surface_spec(milling, granularity_index, seed=0, noise_level=0.1):
    if milling not in MILLING_TYPES:
        raise ParameterError(f"milling must be one of {MILLING_TYPES}, got {milling!r}")
    if not 0 <= granularity_index < 6:
        raise ParameterError(f"granularity_index must be in [0, 6), got {granularity_index}")
    period = DEFAULT_PERIODS_UM[granularity_index]
    return SurfaceSpec(
        milling=milling,
        granularity_index=granularity_index,
        period_um=period,
        amplitude_um=AMPLITUDE_PER_PERIOD * period,
        noise_level=noise_level,
        seed=seed,
    )


def default_class_table(noise_level=0.1):
    """All 18 (milling, granularity) combinations with the default ladder."""
    return [surface_spec(m, g, noise_level=noise_level) for m in MILLING_TYPES for g in range(6)]


@dataclass
class HeightField:
    """Surface heights (µm) on a regular lattice; heights[i, j] sits at
    (u, v) = (i * pitch, j * pitch) with u along the specimen length."""

    heights: np.ndarray
    pitch_um: float

    @property
    def extent_um(self):
        n_len, n_wid = self.heights.shape
        return ((n_len - 1) * self.pitch_um, (n_wid - 1) * self.pitch_um)

    def sample(self, u_um, v_um):
        return bilinear_sample(self.heights, np.asarray(v_um) / self.pitch_um, np.asarray(u_um) / self.pitch_um)


def _smooth(a):
    """Separable [1,2,1]/4 filter, twice per axis (band-limits white noise)."""
    for _ in range(2):
        p = np.pad(a, ((1, 1), (0, 0)), mode="edge")
        a = 0.25 * (p[:-2] + 2 * p[1:-1] + p[2:])
        p = np.pad(a, ((0, 0), (1, 1)), mode="edge")
        a = 0.25 * (p[:, :-2] + 2 * p[:, 1:-1] + p[:, 2:])
    return a


def make_height_field(spec, extent_um, lattice_pitch_um, rng):
    """Generate the groove pattern for one specimen.

    H mills vary along the width axis, V along the length axis, T is a set of
    concentric circular grooves about an off-lattice center.
    """
    if lattice_pitch_um > spec.period_um / 8.0:
        raise ParameterError(
            f"lattice pitch {lattice_pitch_um} µm too coarse for period {spec.period_um} µm "
            f"(needs <= period/8 = {spec.period_um / 8.0})"
        )
    len_um, wid_um = extent_um
    n_len = int(np.floor(len_um / lattice_pitch_um)) + 1
    n_wid = int(np.floor(wid_um / lattice_pitch_um)) + 1
    u = np.arange(n_len)[:, None] * lattice_pitch_um
    v = np.arange(n_wid)[None, :] * lattice_pitch_um
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if spec.milling == "V":
        coord = np.broadcast_to(u, (n_len, n_wid))
    elif spec.milling == "H":
        coord = np.broadcast_to(v, (n_len, n_wid))
    else:  # turning: rings about a center in the middle third, off-lattice
        cu = rng.uniform(len_um / 3.0, 2.0 * len_um / 3.0)
        cv = rng.uniform(wid_um / 3.0, 2.0 * wid_um / 3.0)
        coord = np.hypot(u - cu, v - cv)
    # grooves are cut into stock, so heights sit in [0, 2A] above the groove
    # floor: the mean level scales with groove depth
    heights = spec.amplitude_um * (1.0 + np.sin(2.0 * np.pi * coord / spec.period_um + phase))
    if spec.noise_level > 0.0 and spec.amplitude_um > 0.0:
        noise = _smooth(rng.standard_normal((n_len, n_wid)))
        std = noise.std()
        if std > 0:
            heights = heights + spec.noise_level * spec.amplitude_um * noise / std
    return HeightField(heights=heights, pitch_um=lattice_pitch_um)


def render_image(
    field,
    pixel_pitch=NOMINAL_PIXEL_PITCH,
    light_azimuth=np.pi / 4.0,
    gain=1.2,
    rng=None,
    out_px=None,
    jitter=0.05,
    class_id=-1,
):
    """Shade the field and point-sample it at camera pixel centers.

    Intensity is a base level plus the directional height derivative along the
    light azimuth.  No anti-aliasing: periods under twice the pixel pitch
    alias by construction.
    """
    lp, wp = pixel_pitch
    if min(lp, wp) <= field.pitch_um:
        raise ParameterError(
            f"pixel pitch {pixel_pitch} must exceed the lattice pitch {field.pitch_um}"
        )
    len_um, wid_um = field.extent_um
    delta = field.pitch_um
    if out_px is None:
        out_px = (int((len_um - 2 * delta) / lp) - 1, int((wid_um - 2 * delta) / wp) - 1)
    n_u, n_v = out_px
    u = delta + (np.arange(n_u)[:, None] + 0.5) * lp
    v = delta + (np.arange(n_v)[None, :] + 0.5) * wp
    if u.max() + delta > len_um or v.max() + delta > wid_um:
        raise ParameterError(f"requested {out_px} px exceeds field extent {field.extent_um}")
    du, dv = delta * np.cos(light_azimuth), delta * np.sin(light_azimuth)
    uu = np.broadcast_to(u, (n_u, n_v))
    vv = np.broadcast_to(v, (n_u, n_v))
    deriv = (field.sample(uu + du, vv + dv) - field.sample(uu - du, vv - dv)) / (2.0 * delta)
    intensity = 0.5 + gain * deriv
    rgb = np.repeat(intensity[:, :, None], 3, axis=2)
    if rng is not None and jitter > 0.0:
        rgb = rgb * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=3))
        rgb = rgb + 0.5 * jitter * rng.uniform(-1.0, 1.0)
    pixels = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    return TextureImage(pixels=pixels, pixel_pitch=(lp, wp), class_id=class_id)


@dataclass
class SweepPath:
    """Straight whisker path across the field, angle measured from the length axis."""

    start_u_um: float
    start_v_um: float
    angle_rad: float
    n_samples: int


def simulate_sweep(
    field,
    path,
    speed=DEFAULT_SWEEP_SPEED,
    sample_rate=None,
    stick_slip_level=0.03,
    noise_level=0.03,
    rng=None,
    class_id=-1,
):
    """Drag a whisker along ``path`` and record 6 channels.

    Pressure channels follow the local height; accelerometer channels follow
    the discrete second difference of height along the path.  Stick-slip is
    modeled as random stalls of the advance followed by catch-up jumps.
    """
    speed_um_s = speed * 1000.0 / 60.0
    if sample_rate is None:
        sample_rate = speed_um_s / DEFAULT_SAMPLE_SPACING_UM
    spacing = speed_um_s / sample_rate
    n = path.n_samples
    if rng is None:
        rng = np.random.default_rng(0)

    advance = np.ones(n)
    if stick_slip_level > 0.0:
        i = 1
        while i < n:
            if rng.random() < stick_slip_level * 0.5:
                stall = int(rng.integers(1, 5))
                stall = min(stall, n - i)
                advance[i : i + stall] = 0.0
                if i + stall < n:
                    advance[i + stall] = 1.0 + stall  # catch-up jump
                i += stall + 1
            else:
                i += 1
    s = np.concatenate([[0.0], np.cumsum(advance[1:])]) * spacing
    u = path.start_u_um + s * np.cos(path.angle_rad)
    v = path.start_v_um + s * np.sin(path.angle_rad)
    len_um, wid_um = field.extent_um
    if u.min() < 0 or v.min() < 0 or u.max() > len_um or v.max() > wid_um:
        raise ParameterError(
            f"sweep path leaves the field: u in [{u.min():.1f}, {u.max():.1f}], "
            f"v in [{v.min():.1f}, {v.max():.1f}], extent {field.extent_um}"
        )
    h = field.sample(u, v)
    field_scale = float(field.heights.std())

    d2 = np.zeros(n)
    if n >= 3:
        d2[1:-1] = np.diff(h, 2)
    # in-plane excitation acts along the local surface gradient (the lateral
    # contact force direction), so ax/ay split by groove orientation
    delta = field.pitch_um
    gu = (field.sample(u + delta, v) - field.sample(u - delta, v)) / (2.0 * delta)
    gv = (field.sample(u, v + delta) - field.sample(u, v - delta)) / (2.0 * delta)
    gnorm = np.hypot(gu, gv)
    safe = np.where(gnorm > 0.0, gnorm, 1.0)
    dir_u = np.where(gnorm > 0.0, gu / safe, 0.0)
    dir_v = np.where(gnorm > 0.0, gv / safe, 0.0)
    accel = np.stack([10.0 * dir_u * d2, 10.0 * dir_v * d2, 10.0 * d2], axis=1)
    pressure = np.stack([g * h for g in _PRESSURE_GAINS], axis=1)
    if noise_level > 0.0 and field_scale > 0.0:
        accel += 10.0 * noise_level * d2.std() * rng.standard_normal((n, 3))
        pressure += noise_level * field_scale * rng.standard_normal((n, 3))
    samples = np.concatenate([accel, pressure], axis=1)
    return TactileSweep(samples=samples, sample_rate=sample_rate, sweep_speed=speed, class_id=class_id)


# ---------------------------------------------------------------------------
# frequency-peak oracle classifier (independent of any learned model)


def classify_image_spectrum(image, periods=DEFAULT_PERIODS_UM, max_period_um=1000.0):
    """Nearest-period classification from the 2D power spectrum peak.

    Returns (milling_index, granularity_index).  Orientation comes from the
    angular distribution of near-peak energy: tight along one axis means a
    linear groove pattern, a wide spread means turning rings.
    """
    pixels = image.pixels if isinstance(image, TextureImage) else np.asarray(image)
    lp, wp = image.pixel_pitch if isinstance(image, TextureImage) else NOMINAL_PIXEL_PITCH
    gray = pixels.mean(axis=2).astype(np.float64)
    gray -= gray.mean()
    h, w = gray.shape
    win = np.hanning(h)[:, None] * np.hanning(w)[None, :]
    power = np.abs(np.fft.fft2(gray * win)) ** 2
    fu = np.fft.fftfreq(h, d=lp)[:, None]
    fv = np.fft.fftfreq(w, d=wp)[None, :]
    radius = np.hypot(fu, fv)
    power = power.copy()
    power[radius < 1.0 / max_period_um] = 0.0
    peak = np.unravel_index(np.argmax(power), power.shape)
    f_peak = radius[peak]
    if f_peak <= 0:
        return 0, 0
    period_est = 1.0 / f_peak
    gran = int(np.argmin([abs(np.log(period_est) - np.log(p)) for p in periods]))

    # ring energy far from the peak angle: linear gratings concentrate on one
    # axis, turning rings spread across all orientations
    ring = (radius > 0.75 * f_peak) & (radius < 1.35 * f_peak)
    angles = np.arctan2(np.abs(np.broadcast_to(fv, power.shape)[ring]),
                        np.abs(np.broadcast_to(fu, power.shape)[ring]))
    weights = power[ring]
    peak_angle = float(np.arctan2(abs(fv.ravel()[peak[1]]), abs(fu.ravel()[peak[0]])))
    off_fraction = float(weights[np.abs(angles - peak_angle) > 0.4].sum() / weights.sum())
    if off_fraction > 0.15:
        milling = 2  # turning
    elif peak_angle < np.pi / 4.0:
        milling = 1  # varies along length -> vertical milling
    else:
        milling = 0  # varies along width -> horizontal milling
    return milling, gran


# ---------------------------------------------------------------------------
# dataset campaign


def _rng_for(master_seed, *key):
    return np.random.default_rng(np.random.SeedSequence((int(master_seed),) + tuple(int(k) for k in key)))


def generate_dataset(
    out_dir,
    n_specimens_per_class=10,
    sweeps_per_specimen=2,
    images_per_specimen=2,
    master_seed=0,
    classes="HVT",
    image_px=(192, 96),
    noise_level=0.1,
    stick_slip_level=0.03,
    sweep_noise_level=0.03,
    sweep_samples=DEFAULT_SWEEP_SAMPLES,
    pitch_jitter=0.08,
):
    """Generate the full synthetic campaign and write it through dataset-io.

    Every item's randomness is derived from (master_seed, class_id, specimen,
    stream) so any subset regenerates identically.
    """
    if min(n_specimens_per_class, sweeps_per_specimen, images_per_specimen) < 1:
        raise ParameterError("all generation counts must be >= 1")
    millings = [m for m in MILLING_TYPES if m in classes]
    if not millings:
        raise ParameterError(f"classes {classes!r} selects no milling type")
    os.makedirs(out_dir, exist_ok=True)
    lp, wp = NOMINAL_PIXEL_PITCH
    margin = 1.0 + pitch_jitter + 0.02
    extent = ((image_px[0] + 2) * lp * margin, (image_px[1] + 2) * wp * margin)
    records = []
    for milling in millings:
        for gran in range(6):
            for sidx in range(n_specimens_per_class):
                spec = surface_spec(milling, gran, noise_level=noise_level)
                class_id = spec.class_id
                item_seed = int(_rng_for(master_seed, class_id, sidx, 0).integers(0, 2**31))
                field_rng = _rng_for(master_seed, class_id, sidx, 1)
                pitch = min(spec.period_um / 8.0, 24.0)
                field = make_height_field(spec, extent, pitch, field_rng)
                item_id = f"{spec.class_name}_s{sidx}"
                image_paths, sweep_paths = [], []
                for i in range(images_per_specimen):
                    img_rng = _rng_for(master_seed, class_id, sidx, 2, i)
                    factor = 1.0 + img_rng.uniform(-pitch_jitter, pitch_jitter)
                    img = render_image(
                        field,
                        pixel_pitch=(lp * factor, wp * factor),
                        rng=img_rng,
                        out_px=image_px,
                        class_id=class_id,
                    )
                    rel = f"{item_id}_img{i}.ppm"
                    save_image(os.path.join(out_dir, rel), img)
                    image_paths.append(rel)
                for j in range(sweeps_per_specimen):
                    swp_rng = _rng_for(master_seed, class_id, sidx, 3, j)
                    start_u = 150.0 + swp_rng.uniform(0.0, 100.0)
                    start_v = 150.0 + swp_rng.uniform(0.0, 100.0)
                    path = SweepPath(start_u, start_v, DEFAULT_SWEEP_ANGLE, sweep_samples)
                    sweep = simulate_sweep(
                        field,
                        path,
                        stick_slip_level=stick_slip_level,
                        noise_level=sweep_noise_level,
                        rng=swp_rng,
                        class_id=class_id,
                    )
                    rel = f"{item_id}_swp{j}.csv"
                    save_sweep_csv(os.path.join(out_dir, rel), sweep)
                    sweep_paths.append(rel)
                records.append(
                    ManifestRecord(
                        item_id=item_id,
                        class_id=class_id,
                        class_name=spec.class_name,
                        specimen_id=item_id,
                        images=image_paths,
                        sweeps=sweep_paths,
                        seed=item_seed,
                    )
                )
    save_manifest(os.path.join(out_dir, "manifest.jsonl"), records)
    return records
