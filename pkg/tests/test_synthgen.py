"""Unit tests for the procedural visuotactile generator."""

import filecmp
import os

import numpy as np
import pytest

from vistafuse import synthgen
from vistafuse.errors import ParameterError
from vistafuse.synthgen import (
    DEFAULT_PERIODS_UM,
    SweepPath,
    classify_image_spectrum,
    default_class_table,
    make_height_field,
    render_image,
    simulate_sweep,
    surface_spec,
)


def test_surface_spec_classes():
    spec = surface_spec("V", 2)
    assert spec.class_id == 8
    assert spec.class_name == "V-2"
    assert spec.period_um == DEFAULT_PERIODS_UM[2]
    assert spec.amplitude_um == pytest.approx(0.05 * spec.period_um)
    table = default_class_table()
    assert len(table) == 18
    assert sorted(s.class_id for s in table) == list(range(18))
    with pytest.raises(ParameterError):
        surface_spec("X", 0)
    with pytest.raises(ParameterError):
        surface_spec("H", 6)


def test_height_field_geometry():
    rng = np.random.default_rng(0)
    spec = surface_spec("V", 0, noise_level=0.0)
    field = make_height_field(spec, (2000.0, 1000.0), 20.0, rng)
    # V grooves vary along the length axis only
    assert np.allclose(field.heights, field.heights[:, :1])
    assert field.heights.min() >= -1e-9
    assert field.heights.max() <= 2.0 * spec.amplitude_um + 1e-9
    # mean level tracks the groove amplitude
    assert abs(field.heights.mean() - spec.amplitude_um) < 0.2 * spec.amplitude_um
    spec_h = surface_spec("H", 0, noise_level=0.0)
    field_h = make_height_field(spec_h, (2000.0, 1000.0), 20.0, rng)
    assert np.allclose(field_h.heights, field_h.heights[:1, :])
    with pytest.raises(ParameterError):
        make_height_field(spec, (2000.0, 1000.0), 100.0, rng)


def test_simulate_sweep_flat_field_silent():
    from vistafuse.synthgen import HeightField

    field = HeightField(heights=np.full((101, 101), 3.0), pitch_um=20.0)
    path = SweepPath(100.0, 100.0, np.deg2rad(30.0), 100)
    sweep = simulate_sweep(field, path, stick_slip_level=0.0, noise_level=0.0)
    accel = sweep.samples[:, :3]
    pressure = sweep.samples[:, 3:]
    assert np.allclose(accel, 0.0)
    assert np.allclose(pressure, 3.0 * np.array([0.3, 0.3, 1.0]))


def test_simulate_sweep_amplitude_linearity():
    rng = np.random.default_rng(1)
    spec = surface_spec("V", 1, noise_level=0.0)
    field = make_height_field(spec, (4000.0, 2000.0), 20.0, rng)
    from vistafuse.synthgen import HeightField

    doubled = HeightField(heights=2.0 * field.heights, pitch_um=field.pitch_um)
    path = SweepPath(150.0, 150.0, np.deg2rad(28.0), 150)
    s1 = simulate_sweep(field, path, stick_slip_level=0.0, noise_level=0.0)
    s2 = simulate_sweep(doubled, path, stick_slip_level=0.0, noise_level=0.0)
    p2p1 = np.ptp(s1.samples[:, 5])
    p2p2 = np.ptp(s2.samples[:, 5])
    assert p2p2 == pytest.approx(2.0 * p2p1, rel=1e-9)


def test_simulate_sweep_dominant_frequency():
    # straight path along the length axis of a V field: the along-path period
    # equals the groove period, so the accel peak sits at speed/period
    rng = np.random.default_rng(2)
    spec = surface_spec("V", 0, noise_level=0.0)  # 240 µm period
    field = make_height_field(spec, (8000.0, 1000.0), 20.0, rng)
    path = SweepPath(100.0, 500.0, 0.0, 512)
    sweep = simulate_sweep(field, path, stick_slip_level=0.0, noise_level=0.0)
    az = sweep.samples[:, 2] - sweep.samples[:, 2].mean()
    power = np.abs(np.fft.rfft(az * np.hanning(az.size))) ** 2
    freqs = np.fft.rfftfreq(az.size, d=1.0 / sweep.sample_rate)
    peak = freqs[np.argmax(power[1:]) + 1]
    speed_um_s = sweep.sweep_speed * 1000.0 / 60.0
    assert peak == pytest.approx(speed_um_s / spec.period_um, rel=0.05)


def test_sweep_orientation_energy_split():
    # in-plane accel energy concentrates on the axis of groove variation
    rng = np.random.default_rng(3)
    path = SweepPath(150.0, 150.0, np.deg2rad(28.0), 200)
    energies = {}
    for milling in ("H", "V"):
        spec = surface_spec(milling, 2, noise_level=0.0)
        field = make_height_field(spec, (4000.0, 2000.0), 10.0, rng)
        s = simulate_sweep(field, path, stick_slip_level=0.0, noise_level=0.0)
        energies[milling] = ((s.samples[:, 0] ** 2).sum(), (s.samples[:, 1] ** 2).sum())
    assert energies["V"][0] > 10.0 * energies["V"][1]  # V varies along u -> ax
    assert energies["H"][1] > 10.0 * energies["H"][0]  # H varies along v -> ay


def test_sweep_path_bounds_checked():
    rng = np.random.default_rng(4)
    spec = surface_spec("H", 0, noise_level=0.0)
    field = make_height_field(spec, (2000.0, 1000.0), 20.0, rng)
    with pytest.raises(ParameterError):
        simulate_sweep(field, SweepPath(100.0, 100.0, 0.0, 500), rng=rng)


def test_render_image_contracts():
    rng = np.random.default_rng(5)
    spec = surface_spec("H", 0, noise_level=0.0)
    field = make_height_field(spec, (3000.0, 2000.0), 20.0, rng)
    img = render_image(field, out_px=(64, 48), class_id=3)
    assert img.pixels.shape == (64, 48, 3)
    assert img.pixels.dtype == np.uint8
    assert img.class_id == 3
    with pytest.raises(ParameterError):
        render_image(field, pixel_pitch=(10.0, 10.0), out_px=(16, 16))
    with pytest.raises(ParameterError):
        render_image(field, out_px=(500, 500))


def test_oracle_on_coarse_classes():
    rng = np.random.default_rng(6)
    for milling_idx, milling in enumerate(("H", "V", "T")):
        spec = surface_spec(milling, 0, noise_level=0.05)
        field = make_height_field(spec, (6600.0, 3700.0), 24.0, rng)
        img = render_image(field, out_px=(192, 96), rng=rng)
        m, g = classify_image_spectrum(img)
        assert (m, g) == (milling_idx, 0)


def test_generate_dataset_deterministic(tmp_path):
    kwargs = dict(
        n_specimens_per_class=1,
        sweeps_per_specimen=1,
        images_per_specimen=1,
        master_seed=11,
        classes="T",
        image_px=(96, 80),
        sweep_samples=120,
    )
    recs_a = synthgen.generate_dataset(str(tmp_path / "a"), **kwargs)
    recs_b = synthgen.generate_dataset(str(tmp_path / "b"), **kwargs)
    assert [r.item_id for r in recs_a] == [r.item_id for r in recs_b]
    assert len(recs_a) == 6
    for name in sorted(os.listdir(tmp_path / "a")):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name


def test_generate_dataset_validation(tmp_path):
    with pytest.raises(ParameterError):
        synthgen.generate_dataset(str(tmp_path), n_specimens_per_class=0)
    with pytest.raises(ParameterError):
        synthgen.generate_dataset(str(tmp_path), classes="XYZ")
