import json
import math

import numpy as np
import pytest

from obstacle import discretize as dz
from obstacle import model
from obstacle.model import (NonlinearitySpec, ObstacleSpec, PenalizedNonlinearity, PotentialSpec,
                            ProblemInstance)


def config(**overrides):
    cfg = json.loads(json.dumps(model.DEFAULT_CONFIG))
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def instance(**overrides) -> ProblemInstance:
    return model.instance_from_config(config(**overrides))


def linear_instance(n=201, lam=10.0, amplitude=0.15):
    """f = 0: the classical linear obstacle problem (a = inf, so g = 0 everywhere)."""
    f = NonlinearitySpec("zero")
    pen = PenalizedNonlinearity(f, 4.0, math.inf, -1.5, 1.5)
    return ProblemInstance(f, PotentialSpec(), ObstacleSpec(amplitude=amplitude), pen, lam, 8.0, 1.0, n)


def setup(inst, n=None):
    mesh = dz.build_mesh(inst, n)
    return mesh, dz.assemble(inst, mesh)


@pytest.fixture(scope="session")
def default_inst():
    return instance()


@pytest.fixture(scope="session")
def default_op(default_inst):
    return setup(default_inst)[1]


@pytest.fixture(scope="session")
def coarse_inst():
    return instance(mesh={"n": 401})


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
