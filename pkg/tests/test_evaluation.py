"""Evaluation reports: MAE statistics, calibration and real-time protocols."""

import csv

import numpy as np
import pytest

from astskin.calib import (
    ProtocolSpec,
    calibration_grid,
    design_matrix,
    generate_dataset,
    split,
    target_vector,
)
from astskin.errors import InputError, ProtocolError, ProvenanceError
from astskin.evaluation import (
    REALTIME_POINTS,
    EvalReport,
    ReportRow,
    calibration_report,
    emit_report,
    estimate,
    mae,
    realtime_protocol,
    response_errors,
)
from astskin.gpr import BUNDLE_TARGETS, ModelBundle, fit, validate
from astskin.provenance import fingerprint
from astskin.signal import ToneSet
from astskin.skinsim import bilayer_spec, single_layer_spec

TONES = ToneSet()


def train_bundle(spec, seed=0, frames=3, noise=0.005):
    proto = ProtocolSpec(
        grid=calibration_grid(),
        pegs=(5.0, 7.0, 9.0),
        depths=tuple(spec.depth_grid()),
        frames_per_press=frames,
        noise_sd=noise,
        base_seed=seed,
    )
    ds = generate_dataset(spec, proto, TONES)
    train_p, val_p, _ = split(ds, seed)
    X = design_matrix(train_p)
    models, rmse = {}, {}
    for i, name in enumerate(BUNDLE_TARGETS):
        models[name] = fit(
            X, target_vector(train_p, name), restarts=2, max_iters=60,
            seed=(seed, i), target_name=name,
        )
        rmse[name] = validate(models[name], design_matrix(val_p), target_vector(val_p, name))
    bundle = ModelBundle(
        models=models,
        skin=spec,
        tones=TONES,
        skin_fingerprint=fingerprint(spec.to_dict()),
        dataset_fingerprint=ds.fingerprint,
        dataset_path="unused.csv",
        noise_sd=noise,
        split_seed=seed,
        train_seed=seed,
        validation_rmse=rmse,
    )
    return bundle, ds


@pytest.fixture(scope="module")
def bilayer_bundle():
    return train_bundle(bilayer_spec())


@pytest.fixture(scope="module")
def single_bundle():
    return train_bundle(single_layer_spec())


class TestMae:
    def test_exact_predictions(self):
        assert mae([(1.0, 1.0), (2.0, 2.0)]) == (0.0, 0.0)

    def test_constant_errors(self):
        assert mae([(2.0, 1.0), (0.0, -1.0), (5.5, 4.5)]) == pytest.approx((1.0, 0.0))

    def test_zero_and_two(self):
        assert mae([(1.0, 1.0), (3.0, 1.0)]) == pytest.approx((1.0, 1.0))

    def test_translation_detection(self):
        truth = np.arange(10.0)
        assert mae(zip(truth + 0.75, truth)) == pytest.approx((0.75, 0.0))

    def test_empty(self):
        with pytest.raises(InputError):
            mae([])


class TestEstimate:
    def test_shape_and_uncertainty(self, bilayer_bundle):
        bundle, ds = bilayer_bundle
        est = estimate(bundle, ds.samples[0].features)
        assert est.sd_force > 0 and est.sd_x > 0
        assert 0 <= est.diameter <= 20

    def test_matches_batch_path(self, bilayer_bundle):
        bundle, ds = bilayer_bundle
        sample = ds.samples[5]
        est = estimate(bundle, sample.features)
        stats = response_errors(bundle, [sample])
        assert stats["force"][0] == pytest.approx(abs(est.force - sample.force), rel=1e-9)


class TestCalibrationReport:
    def test_single_group_over_test_set(self, bilayer_bundle):
        bundle, ds = bilayer_bundle
        report = calibration_report(bundle, ds)
        assert report.mode == "calibration"
        assert len(report.rows) == 1
        row = report.rows[0]
        _, _, test_p = split(ds, bundle.split_seed)
        assert row.trials == len(test_p)
        assert set(row.mae) == set(BUNDLE_TARGETS)
        assert all(v >= 0 for v in row.mae.values())

    def test_fingerprint_mismatch(self, bilayer_bundle, single_bundle):
        bundle, _ = bilayer_bundle
        _, other_ds = single_bundle
        with pytest.raises(ProvenanceError):
            calibration_report(bundle, other_ds)

    def test_training_set_looks_better(self, bilayer_bundle):
        # overfitting sanity: train errors below test errors for most responses
        bundle, ds = bilayer_bundle
        train_p, _, test_p = split(ds, bundle.split_seed)
        train_stats = response_errors(bundle, train_p)
        test_stats = response_errors(bundle, test_p)
        better = sum(
            train_stats[name][0] < test_stats[name][0] for name in BUNDLE_TARGETS
        )
        assert better >= 3


class TestRealtimeProtocol:
    def test_report_shape(self, bilayer_bundle):
        bundle, _ = bilayer_bundle
        report = realtime_protocol(bundle, bundle.skin, trials=4, seed=1)
        assert report.mode == "realtime"
        assert len(report.rows) == 12
        assert {r.point_id for r in report.rows} == {"D", "F", "J", "K"}
        assert {r.peg_mm for r in report.rows} == {5.0, 7.0, 9.0}
        assert all(r.trials == 4 for r in report.rows)

    def test_noncalibrated_points_off_grid(self):
        grid_coords = {(p.x, p.y) for p in calibration_grid()}
        by_label = {label: (x, y) for label, x, y in REALTIME_POINTS}
        assert by_label["J"] == (13.0, 14.0) and by_label["J"] not in grid_coords
        assert by_label["K"] == (10.0, 12.0) and by_label["K"] not in grid_coords
        assert by_label["D"] in grid_coords and by_label["F"] in grid_coords

    def test_zero_noise_trials_are_identical(self, single_bundle):
        bundle, _ = single_bundle
        quiet = ModelBundle(
            models=bundle.models,
            skin=bundle.skin,
            tones=bundle.tones,
            skin_fingerprint=bundle.skin_fingerprint,
            dataset_fingerprint=bundle.dataset_fingerprint,
            dataset_path=bundle.dataset_path,
            noise_sd=0.0,
            split_seed=bundle.split_seed,
            train_seed=bundle.train_seed,
            validation_rmse=bundle.validation_rmse,
        )
        report = realtime_protocol(quiet, quiet.skin, trials=5, seed=3)
        for row in report.rows:
            assert all(v == pytest.approx(0.0, abs=1e-12) for v in row.stdev.values())

    def test_determinism(self, bilayer_bundle):
        bundle, _ = bilayer_bundle
        a = realtime_protocol(bundle, bundle.skin, trials=3, seed=5)
        b = realtime_protocol(bundle, bundle.skin, trials=3, seed=5)
        assert a == b

    def test_commanded_force_depth_for_smallest_peg(self, single_bundle):
        # 3 N is the 5 mm peg's ceiling on the single-layer skin: full travel
        from astskin.skinsim import Peg, invert_force

        bundle, _ = single_bundle
        assert invert_force(bundle.skin, Peg(5.0), 3.0) == pytest.approx(3.0, abs=1e-12)

    def test_force_above_peg_ceiling(self, single_bundle):
        bundle, _ = single_bundle
        with pytest.raises(ProtocolError, match="5.0 mm"):
            realtime_protocol(bundle, bundle.skin, force=4.0, trials=2, seed=0)


class TestEmitReport:
    def test_csv_row_count_and_columns(self, bilayer_bundle, tmp_path):
        bundle, _ = bilayer_bundle
        report = realtime_protocol(bundle, bundle.skin, trials=2, seed=0)
        out = tmp_path / "report.csv"
        assert emit_report(report, "csv", out) == 12
        with out.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [
            "skin", "point_id", "x_mm", "y_mm", "peg_mm",
            "mae_force_n", "mae_dia_mm", "mae_locx_mm", "mae_locy_mm",
            "stdev_force_n", "stdev_dia_mm", "stdev_locx_mm", "stdev_locy_mm",
            "trials",
        ]
        assert len(rows) == 13
        # ordered by (point, peg) ascending
        keys = [(r[1], float(r[4])) for r in rows[1:]]
        assert keys == sorted(keys)

    def test_markdown_matches_csv_at_three_decimals(self, bilayer_bundle, tmp_path):
        bundle, _ = bilayer_bundle
        report = realtime_protocol(bundle, bundle.skin, trials=2, seed=0)
        csv_p, md_p = tmp_path / "r.csv", tmp_path / "r.md"
        emit_report(report, "csv", csv_p)
        emit_report(report, "markdown", md_p)
        with csv_p.open() as fh:
            csv_rows = list(csv.reader(fh))[1:]
        md_rows = [
            [c.strip() for c in line.strip().strip("|").split("|")]
            for line in md_p.read_text().splitlines()[2:]
        ]
        for c_row, m_row in zip(csv_rows, md_rows):
            for col in range(5, 13):
                assert float(m_row[col]) == pytest.approx(float(c_row[col]), abs=5e-4)

    def test_empty_report_writes_header_only(self, tmp_path):
        out = tmp_path / "empty.csv"
        assert emit_report(EvalReport(mode="realtime", rows=()), "csv", out) == 0
        assert out.read_text().strip().startswith("skin,point_id")

    def test_bad_format(self, tmp_path):
        with pytest.raises(InputError):
            emit_report(EvalReport(mode="x", rows=()), "yaml", tmp_path / "x")

    def test_calibration_row_has_empty_keys(self, bilayer_bundle, tmp_path):
        bundle, ds = bilayer_bundle
        report = calibration_report(bundle, ds)
        out = tmp_path / "cal.csv"
        assert emit_report(report, "csv", out) == 1
        with out.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[1][0] == "bilayer"
        assert rows[1][1] == "all"
        assert rows[1][2] == rows[1][3] == rows[1][4] == ""
