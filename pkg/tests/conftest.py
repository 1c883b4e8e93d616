import json
import os
import pathlib
import sys

import numpy as np
import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from segquant.harness import NoiseSchedule, ToyModelSpec, build_toy_dit, calibration_set  # noqa: E402
from segquant.numerics import Rng  # noqa: E402

CONFIG_DIR = ROOT / "fixtures" / "configs"
PINS_FILE = ROOT / "tests" / "pins.json"
REPIN_ENV = "SEGQUANT_REPIN"


class RegressionPins:
    """Numbers recorded by the first run and compared on every later one.

    Set ``SEGQUANT_REPIN=1`` to overwrite the stored values after an
    intended numeric change.
    """

    def __init__(self, path: pathlib.Path, *, repin: bool = False) -> None:
        self.path = path
        self.repin = repin
        self.values = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        self.dirty = False

    def check(self, name, observed, *, rel=1e-5):
        current = [float(value) for value in np.ravel(np.asarray(observed, dtype=np.float64))]
        if self.repin or name not in self.values:
            self.values[name] = current
            self.dirty = True
            pytest.skip(f"recorded regression values for {name} in {self.path.name}")
        assert current == pytest.approx(self.values[name], rel=rel)

    def flush(self) -> None:
        if self.dirty:
            self.path.write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def regression_pins():
    pins = RegressionPins(PINS_FILE, repin=os.environ.get(REPIN_ENV) == "1")
    yield pins
    pins.flush()


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def toy_spec():
    return ToyModelSpec()


@pytest.fixture(scope="session")
def toy_model(toy_spec):
    return build_toy_dit(toy_spec)


@pytest.fixture(scope="session")
def toy_calib(toy_spec):
    return calibration_set(toy_spec, NoiseSchedule.linear(10), 8, Rng(7))


@pytest.fixture
def config_dir():
    return CONFIG_DIR
