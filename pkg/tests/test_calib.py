"""Calibration protocol: grid, dataset assembly, splitting, CSV round trips."""

import json

import numpy as np
import pytest

from astskin.calib import (
    OFF_GRID,
    CalibrationGrid,
    GridPoint,
    ProtocolSpec,
    calibration_grid,
    default_protocol,
    design_matrix,
    generate_dataset,
    load_dataset,
    meta_path,
    save_dataset,
    skin_label,
    split,
    target_vector,
)
from astskin.errors import ConfigError, InputError, ProtocolError, ProvenanceError, SplitError
from astskin.signal import ToneSet
from astskin.skinsim import ContactState, Peg, bilayer_spec, sense, single_layer_spec, true_force

TONES = ToneSet()

# coordinates as printed in the skin's calibration figure
EXPECTED_GRID = {
    "A": (10, 10), "B": (13, 10), "C": (16, 10),
    "D": (16, 13), "E": (13, 13), "F": (10, 13),
    "G": (16, 16), "H": (13, 16), "I": (10, 16),
}


def small_protocol(spec, frames=2, noise=0.005, seed=0):
    return ProtocolSpec(
        grid=calibration_grid(),
        pegs=(5.0, 7.0, 9.0),
        depths=tuple(spec.depth_grid()),
        frames_per_press=frames,
        noise_sd=noise,
        base_seed=seed,
    )


class TestCalibrationGrid:
    def test_canonical_points(self):
        grid = calibration_grid()
        assert grid.labels() == tuple("ABCDEFGHI")
        for p in grid:
            assert (p.x, p.y) == EXPECTED_GRID[p.label]

    def test_point_e(self):
        e = [p for p in calibration_grid() if p.label == "E"][0]
        assert (e.x, e.y) == (13.0, 13.0)

    def test_axis_spacing(self):
        xs = sorted({p.x for p in calibration_grid()})
        ys = sorted({p.y for p in calibration_grid()})
        assert xs == ys == [10.0, 13.0, 16.0]
        assert max(xs) - min(xs) == 6.0

    def test_validation(self):
        pts = tuple(GridPoint(l, x, y) for l, (x, y) in EXPECTED_GRID.items())
        CalibrationGrid(points=pts)
        with pytest.raises(ConfigError):
            CalibrationGrid(points=pts[:8])
        bad = pts[:8] + (GridPoint("A", 10.0, 16.0),)
        with pytest.raises(ConfigError):
            CalibrationGrid(points=bad)


class TestProtocolSpec:
    def test_default_protocol_depths(self):
        assert default_protocol(single_layer_spec()).depths == (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
        assert default_protocol(bilayer_spec()).depths == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)

    def test_invalid(self):
        grid = calibration_grid()
        with pytest.raises(ConfigError):
            ProtocolSpec(grid=grid, pegs=(), depths=(1.0,))
        with pytest.raises(ConfigError):
            ProtocolSpec(grid=grid, depths=(2.0, 1.0))
        with pytest.raises(ConfigError):
            ProtocolSpec(grid=grid, depths=(1.0,), frames_per_press=0)


class TestGenerateDataset:
    def test_default_sample_count(self):
        spec = single_layer_spec()
        ds = generate_dataset(spec, default_protocol(spec, frames_per_press=20), TONES)
        assert len(ds) == 9 * 3 * 6 * 20 == 3240

    def test_minimal_protocol_is_grid_sized(self):
        spec = single_layer_spec()
        proto = ProtocolSpec(
            grid=calibration_grid(), pegs=(7.0,), depths=(1.0,), frames_per_press=1
        )
        ds = generate_dataset(spec, proto, TONES)
        assert len(ds) == 9

    def test_determinism(self):
        spec = bilayer_spec()
        proto = small_protocol(spec)
        a = generate_dataset(spec, proto, TONES)
        b = generate_dataset(spec, proto, TONES)
        assert np.array_equal(design_matrix(list(a.samples)), design_matrix(list(b.samples)))
        assert a.fingerprint == b.fingerprint

    def test_per_sample_seed_derivation(self):
        spec = single_layer_spec()
        proto = small_protocol(spec, frames=2, seed=77)
        ds = generate_dataset(spec, proto, TONES)
        s0 = ds.samples[0]
        expected = sense(
            spec,
            ContactState(s0.x, s0.y, s0.depth_mm, Peg(s0.peg_mm)),
            TONES,
            noise_sd=proto.noise_sd,
            rng_seed=(77, 0),
        )
        assert np.array_equal(s0.features.magnitudes, expected.magnitudes)

    def test_labels_are_noiseless_truth(self):
        spec = bilayer_spec()
        ds = generate_dataset(spec, small_protocol(spec), TONES)
        for s in ds.samples[::97]:
            contact = ContactState(s.x, s.y, s.depth_mm, Peg(s.peg_mm))
            assert s.force == pytest.approx(true_force(spec, contact), abs=1e-12)
            assert s.diameter == s.peg_mm
            assert s.skin == "bilayer"

    def test_oversized_peg_is_protocol_error(self):
        spec = single_layer_spec()
        proto = ProtocolSpec(
            grid=calibration_grid(), pegs=(21.0,), depths=(1.0,), frames_per_press=1
        )
        with pytest.raises(ProtocolError, match="A.*21"):
            generate_dataset(spec, proto, TONES)

    def test_depth_beyond_skin_limit(self):
        spec = single_layer_spec()
        proto = ProtocolSpec(
            grid=calibration_grid(), pegs=(7.0,), depths=(4.0,), frames_per_press=1
        )
        with pytest.raises(ConfigError):
            generate_dataset(spec, proto, TONES)


class TestSplit:
    def make(self, n):
        spec = single_layer_spec()
        frames = max(1, n // 162)
        proto = small_protocol(spec, frames=frames)
        return generate_dataset(spec, proto, TONES)

    def test_default_partition_sizes(self):
        spec = single_layer_spec()
        ds = generate_dataset(spec, default_protocol(spec, frames_per_press=20), TONES)
        train, val, test = split(ds, seed=0)
        assert (len(train), len(val), len(test)) == (2187, 729, 324)

    def test_rounding_rule_on_ten_samples(self):
        ds = self.make(162)
        # emulate a 10-sample dataset via a minimal protocol
        spec = single_layer_spec()
        proto = ProtocolSpec(
            grid=calibration_grid(), pegs=(7.0,), depths=(1.0,), frames_per_press=2
        )
        ds18 = generate_dataset(spec, proto, TONES)
        assert len(ds18) == 18
        train, val, test = split(ds18, seed=1)
        # test = round(0.1 * 18) = 2, val = round(0.225 * 18) = 4
        assert (len(train), len(val), len(test)) == (12, 4, 2)

    def test_partition_is_exact(self):
        ds = self.make(324)
        train, val, test = split(ds, seed=5)
        assert len(train) + len(val) + len(test) == len(ds)
        ids = lambda part: sorted(id(s) for s in part)
        all_ids = sorted(ids(train) + ids(val) + ids(test))
        assert all_ids == sorted(id(s) for s in ds.samples)

    def test_determinism_and_seed_sensitivity(self):
        ds = self.make(324)
        a = split(ds, seed=3)
        b = split(ds, seed=3)
        c = split(ds, seed=4)
        key = lambda part: [(s.point_id, s.peg_mm, s.depth_mm, s.trial) for s in part]
        assert key(a[0]) == key(b[0]) and key(a[2]) == key(b[2])
        assert key(a[2]) != key(c[2])

    def test_too_small(self):
        spec = single_layer_spec()
        proto = ProtocolSpec(
            grid=calibration_grid(), pegs=(7.0,), depths=(1.0,), frames_per_press=1
        )
        ds = generate_dataset(spec, proto, TONES)
        assert len(ds) == 9
        with pytest.raises(SplitError):
            split(ds, seed=0)


class TestTargetExtraction:
    def test_vectors(self):
        spec = single_layer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=1), TONES)
        samples = list(ds.samples)
        X = design_matrix(samples)
        assert X.shape == (len(samples), 4)
        assert np.array_equal(target_vector(samples, "loc_x"), [s.x for s in samples])
        with pytest.raises(InputError):
            target_vector(samples, "weight")


class TestCsvRoundTrip:
    def test_single_layer_header(self, tmp_path):
        spec = single_layer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=1), TONES)
        p = tmp_path / "d.csv"
        save_dataset(ds, p)
        header = p.read_text(encoding="utf-8").splitlines()[0]
        assert header == (
            "skin,layer_count,point_id,x_mm,y_mm,peg_mm,depth_mm,trial,force_n,"
            "m300_l1,m500_l1,m700_l1,m900_l1"
        )

    def test_bilayer_header_has_eight_magnitudes(self, tmp_path):
        spec = bilayer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=1), TONES)
        p = tmp_path / "d.csv"
        save_dataset(ds, p)
        header = p.read_text(encoding="utf-8").splitlines()[0]
        assert header.endswith(
            "m300_l1,m500_l1,m700_l1,m900_l1,m300_l2,m500_l2,m700_l2,m900_l2"
        )

    def test_round_trip(self, tmp_path):
        spec = bilayer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=2, seed=5), TONES)
        p = tmp_path / "d.csv"
        save_dataset(ds, p)
        back = load_dataset(p)
        assert back.fingerprint == ds.fingerprint
        assert back.seed == ds.seed
        assert back.spec == ds.spec
        assert back.protocol == ds.protocol
        assert len(back) == len(ds)
        # 9 significant digits survive the text round trip
        a = design_matrix(list(ds.samples))
        b = design_matrix(list(back.samples))
        assert np.max(np.abs(a - b)) < 1e-9

    def test_rerun_is_byte_identical(self, tmp_path):
        spec = single_layer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=1, seed=3), TONES)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_dataset(ds, p1)
        save_dataset(generate_dataset(spec, small_protocol(spec, frames=1, seed=3), TONES), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert meta_path(p1).read_bytes() == meta_path(p2).read_bytes()

    def test_missing_sidecar(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("nope\n")
        with pytest.raises(InputError):
            load_dataset(p)

    def test_tampered_meta_is_provenance_error(self, tmp_path):
        spec = single_layer_spec()
        ds = generate_dataset(spec, small_protocol(spec, frames=1), TONES)
        p = tmp_path / "d.csv"
        save_dataset(ds, p)
        meta = json.loads(meta_path(p).read_text())
        meta["protocol"]["noise_sd"] = 0.123
        meta_path(p).write_text(json.dumps(meta))
        with pytest.raises(ProvenanceError):
            load_dataset(p)


def test_skin_labels():
    assert skin_label(single_layer_spec()) == "single"
    assert skin_label(bilayer_spec()) == "bilayer"
    assert OFF_GRID == "—"
