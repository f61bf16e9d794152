import json
import math

import pytest

import ehrjoint


@pytest.fixture()
def small_dataset(tmp_path):
    config = json.loads(ehrjoint.default_config_json("1-1"))
    config["n_subjects"] = 60
    out = tmp_path / "data"
    ehrjoint.simulate_to_dir(json.dumps(config), str(out))
    return out


def test_simulate_writes_expected_files(small_dataset):
    for name in ("baselines.csv", "events.csv", "truth.json"):
        assert (small_dataset / name).is_file()
    # fixed schedule: 10 visits per subject plus a header line
    lines = (small_dataset / "events.csv").read_text().strip().splitlines()
    assert len(lines) == 60 * 10 + 1


def test_validate_passes_on_generated_data(small_dataset):
    assert ehrjoint.validate_dir(str(small_dataset)) == []


def test_fit_returns_named_coefficients(small_dataset):
    fit = ehrjoint.fit_dir(str(small_dataset), "lme")
    assert set(fit["beta"]) >= {"(intercept)", "A", "Z", "t"}
    assert all(math.isfinite(v) for v in fit["beta"].values())


def test_replicate_reports_cells(small_dataset):
    cells = ehrjoint.replicate("1-1", ["liang"], n_reps=2, seed=7, n_subjects=40)
    assert {c["coefficient"] for c in cells} == {"A", "Z"}
    for c in cells:
        assert c["n_success"] + c["n_failed"] == 2


def test_unknown_method_raises(small_dataset):
    with pytest.raises(RuntimeError):
        ehrjoint.fit_dir(str(small_dataset), "no-such-method")
