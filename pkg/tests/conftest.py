import numpy as np
import pytest


@pytest.fixture
def photo():
    """Synthetic 'photograph', 96x128: smooth colour gradients, luminance grain, faint chroma noise."""
    h, w = 96, 128
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gen = np.random.default_rng(1234)
    r = 0.5 + 0.4 * np.sin(xx / 9.0) * np.cos(yy / 13.0)
    g = (xx + yy) / (h + w)
    b = 0.5 + 0.3 * np.cos((xx - yy) / 7.0)
    img = np.stack([r, g, b], axis=-1) + 0.03 * gen.standard_normal((h, w, 1))
    img += 0.005 * gen.standard_normal((h, w, 3))
    return np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


@pytest.fixture
def noise_image():
    return np.random.default_rng(99).integers(0, 256, size=(48, 64, 3), dtype=np.uint8)


def constant_image(value, h=32, w=40):
    return np.full((h, w, 3), value, dtype=np.uint8)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
