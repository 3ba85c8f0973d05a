import os
import pytest
from unittest.mock import patch
from config.settings import Settings


class TestSettings:
    def test_settings_defaults_are_valid(self):
        """Test settings validation with the pinned environment"""
        # Environment variables are set in conftest.py
        assert Settings.validate() is True
        assert Settings.SOLVER_TOLERANCE == 1e-12
        assert Settings.FEASIBILITY_TOLERANCE == 1e-10
        assert Settings.SOLVER_MAX_ITERATIONS >= 1

    def test_invalid_values_are_all_reported(self):
        """Test validation lists every bad value in one error"""
        with patch.object(Settings, "SOLVER_TOLERANCE", 0.0), \
                patch.object(Settings, "EXTREME_CAP", 0), \
                patch.object(Settings, "LOG_LEVEL", "LOUD"):
            with pytest.raises(ValueError) as excinfo:
                Settings.validate()

        message = str(excinfo.value)
        assert "Invalid settings" in message
        assert "MFM_SOLVER_TOLERANCE" in message
        assert "MFM_EXTREME_CAP" in message
        assert "MFM_LOG_LEVEL" in message

    def test_custom_values_from_environment(self):
        """Test environment overrides are picked up on reload"""
        with patch.dict(os.environ, {"MFM_EXTREME_CAP": "25", "MFM_MAX_WORKERS": "7"}):
            from importlib import reload
            import config.settings
            reload(config.settings)
            from config.settings import Settings as ReloadedSettings

            assert ReloadedSettings.EXTREME_CAP == 25
            assert ReloadedSettings.MAX_WORKERS == 7
        reload(config.settings)

    def test_malformed_number_falls_back_to_default(self):
        """Test a non-numeric value falls back to the default"""
        with patch.dict(os.environ, {"MFM_SOLVER_MAX_ITERATIONS": "many"}):
            from importlib import reload
            import config.settings
            reload(config.settings)
            from config.settings import Settings as ReloadedSettings

            assert ReloadedSettings.SOLVER_MAX_ITERATIONS == 200
        reload(config.settings)
