import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_test_canvas(width: int, height: int, seed: int = 7) -> np.ndarray:
    """Smooth ink-wash-style RGB canvas for pipeline tests."""
    gen = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    v = 205 - 55 * np.sin(xx / 97.0) * np.cos(yy / 71.0) - 25 * np.cos(xx / 31.0 + 1.0)
    v += gen.normal(0, 2.5, (height, width)).astype(np.float32)
    v = np.clip(v, 0, 255).astype(np.uint8)
    return np.stack([v, v, (v * 0.96).astype(np.uint8)], axis=-1)
