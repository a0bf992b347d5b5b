import pytest
from pydantic import ValidationError

from config import AcquisitionConfig, DatasetConfig, GridConfig, ModelConfig, Settings, load_settings
from errors import ConfigurationError
from models.imaging import DataKind
from schema.network import Variant


def test_acquisition_defaults(acq):
    assert acq.decimation == 3
    assert len(acq.tilt_angles) == 31
    assert acq.tilt_angles[0] == -30.0 and acq.tilt_angles[-1] == 30.0
    assert acq.input_angles == [-20.0, 0.0, 20.0]
    assert acq.bandwidth == pytest.approx(1.8e6)
    assert acq.aperture == pytest.approx(19.2e-3)
    assert acq.lpf_cutoff == pytest.approx(1.6e6)


def test_grid_shapes():
    grid = GridConfig()
    assert grid.iq_grid().shape == (85, 96)
    assert grid.rf_grid().shape == (254, 96)
    assert grid.rf_grid().same_region(grid.iq_grid())


class TestAcquisitionValidation:
    def test_non_integer_rate_ratio(self):
        with pytest.raises(ValidationError):
            AcquisitionConfig(fs_rf=10.0e6)

    def test_rf_rate_below_nyquist(self):
        with pytest.raises(ValidationError):
            AcquisitionConfig(fs_rf=4.0e6)

    def test_input_angle_must_be_transmitted(self):
        with pytest.raises(ValidationError):
            AcquisitionConfig(input_angles=[-21.0, 0.0, 20.0])

    def test_tilts_inside_ninety_degrees(self):
        with pytest.raises(ValidationError):
            AcquisitionConfig(tilt_angles=[-90.0, 0.0], input_angles=[0.0])


def test_split_fractions():
    assert DatasetConfig().split_counts() == (200, 50, 50)
    assert DatasetConfig(scene_count=7).split_counts() == (5, 1, 1)
    with pytest.raises(ValidationError):
        DatasetConfig(split_train=0.7, split_val=0.2, split_test=0.2)


def test_model_variant_and_kind():
    assert ModelConfig(variant="2bid").variant == Variant.TWO_BRANCH
    assert ModelConfig(variant="ID").resolved_kind() == DataKind.RF
    assert ModelConfig(variant="CID").resolved_kind() == DataKind.IQ
    with pytest.raises(ConfigurationError):
        ModelConfig(variant="CID", data_kind="RF").resolved_kind()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_settings(tmp_path / "absent.env")


def test_config_file_values(tmp_path):
    path = tmp_path / "pipeline.env"
    path.write_text(
        "CIDNET_TRAINER__BATCH_SIZE=4\n"
        "CIDNET_MODEL__VARIANT=ID\n"
        "CIDNET_DYNAMIC_RANGE_DB=50\n"
        "UNRELATED_KEY=1\n"
    )
    settings = load_settings(path)
    assert settings.trainer.batch_size == 4
    assert settings.model.variant == Variant.ID
    assert settings.dynamic_range_db == 50.0


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CIDNET_DATASET__SCENE_COUNT", "12")
    monkeypatch.setenv("CIDNET_MI_BINS", "64")
    settings = Settings()
    assert settings.dataset.scene_count == 12
    assert settings.mi_bins == 64


def test_invalid_environment_value(monkeypatch):
    monkeypatch.setenv("CIDNET_TRAINER__STOP_PATIENCE", "0")
    with pytest.raises(ValidationError):
        Settings()
