import numpy as np

from oseenflow import calibration


def test_record_and_get(tmp_path):
    calibration.record_constant("unit_test_c0", 2.5)
    assert calibration.get_constant("unit_test_c0") == 2.5
    assert calibration.get_constant("missing_key", default=7.0) == 7.0


def test_calibrated_bound_margin():
    calibration.record_constant("unit_test_c1", 1.2)
    assert calibration.calibrated_bound("unit_test_c1") >= 1.2


def test_dump_load_roundtrip(tmp_path):
    calibration.record_constant("unit_test_c2", np.pi)
    p = tmp_path / "constants.json"
    calibration.dump(p)
    calibration.record_constant("unit_test_c2", 0.0)
    calibration.load(p)
    assert abs(calibration.get_constant("unit_test_c2") - np.pi) < 1e-15
