"""
Pytest configuration and fixtures for ofbm tests.
"""

import pytest
import tempfile
import os
import sys
from configparser import ConfigParser

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))
from ofbm.model import OfbmSpec
from ofbm.quadrature import QuadratureConfig
from ofbm.rng import RngStream


@pytest.fixture
def test_settings():
    """Create a settings configuration for testing."""
    config = ConfigParser(interpolation=None)
    config.add_section('logging')
    config.set('logging', 'level', 'DEBUG')
    config.set('logging', 'file', '')
    config.set('logging', 'max_size', '10485760')
    config.set('logging', 'backup_count', '5')
    config.set('logging', 'format', '{time:HH:mm:ss} - {level} - {message}')

    config.add_section('quadrature')
    config.set('quadrature', 'x_max', '5000')
    config.set('quadrature', 'rel_tol', '1e-7')
    config.set('quadrature', 'panels_near_zero', '30')
    config.set('quadrature', 'grading_ratio', '0.5')
    config.set('quadrature', 'max_refinements', '3')

    config.add_section('diagnostics')
    config.set('diagnostics', 'z_threshold', '4.5')
    config.set('diagnostics', 'se_floor', '1e-12')

    config.add_section('runtime')
    config.set('runtime', 'threads', '2')
    config.set('runtime', 'output_dir', 'test-results')

    config.add_section('monitoring')
    config.set('monitoring', 'metrics_enabled', 'false')
    config.set('monitoring', 'metrics_file', 'logs/test-metrics.prom')

    return config


@pytest.fixture
def test_settings_file(test_settings):
    """Create a temporary settings file for testing."""
    with tempfile.NamedTemporaryFile(mode='w', suffix='.ini', delete=False) as f:
        test_settings.write(f)
        config_file = f.name

    yield config_file

    # Cleanup
    if os.path.exists(config_file):
        os.unlink(config_file)


@pytest.fixture
def quad():
    """Default quadrature settings (x_max = 1e4, rel_tol = 1e-8)."""
    return QuadratureConfig()


@pytest.fixture
def coarse_quad():
    """Short frequency axis for telegraph sampling and finite-n oracles."""
    return QuadratureConfig(x_max=64.0, rel_tol=1e-6)


@pytest.fixture
def brownian_spec():
    """d=1, D=[0.5], A1=[1], A2=[0]; R(t, t) = pi * t."""
    return OfbmSpec.mason_xiao([[0.5]], "brownian")


@pytest.fixture
def diagonal_spec():
    """d=2 Mason-Xiao model with D = diag(0.7, 0.6)."""
    return OfbmSpec.diagonal([0.7, 0.6], "diag-0.7-0.6")


@pytest.fixture
def stream():
    """Fixed-seed random stream."""
    return RngStream(20240601)


@pytest.fixture
def dyadic_grid():
    return np.linspace(0.0, 1.0, 9)


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Setup test environment variables."""
    # Store original environment
    original_env = os.environ.copy()

    # Set test environment variables
    os.environ['TESTING'] = '1'
    os.environ['LOG_LEVEL'] = 'DEBUG'
    for key in ('LOG_FILE', 'OFBM_THREADS', 'OFBM_Z_THRESHOLD', 'OFBM_OUTPUT_DIR',
                'OFBM_METRICS_ENABLED', 'OFBM_METRICS_FILE'):
        os.environ.pop(key, None)

    yield

    # Restore original environment
    os.environ.clear()
    os.environ.update(original_env)
