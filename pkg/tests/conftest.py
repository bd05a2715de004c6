import numpy as np
import pytest

from selfverify import kernels
from selfverify.network import LayerSpec, Network, NetworkSpec, expected_param_shapes


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def random_params(spec, rng, scale=0.5):
    params = []
    for shapes in expected_param_shapes(spec):
        params.append({name: rng.normal(0, scale, size=shp) for name, shp in shapes.items()})
    return params


def small_cnn_spec(in_ch=2, hw=8, classes=3, pool="maxpool2d"):
    layers = [
        LayerSpec("conv2d", out_channels=4, kernel=(3, 3), padding=1),
        LayerSpec("relu"),
        LayerSpec(pool, size=2, stride=2),
        LayerSpec("conv2d", out_channels=3, kernel=(3, 3), stride=1, padding=1, last_conv=True),
        LayerSpec("relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=classes),
    ]
    return NetworkSpec(layers, [f"c{i}" for i in range(classes)], (in_ch, hw, hw))


def make_net(spec, seed=0, dtype=np.float32, scale=0.5):
    rng = np.random.default_rng(seed)
    return Network(spec, random_params(spec, rng, scale), dtype=dtype)


@pytest.fixture
def small_net():
    return make_net(small_cnn_spec())


# -- shipped desk models and shared long runs --------------------------------------

@pytest.fixture(scope="session")
def desk_image():
    from selfverify.cli import resolve_model
    return resolve_model("desk_image")


@pytest.fixture(scope="session")
def desk_audio():
    from selfverify.cli import resolve_model
    return resolve_model("desk_audio")


AM_SEED = 0


@pytest.fixture(scope="session")
def am_contrast(desk_image):
    """(per-channel (plain, semantic), plain mean, semantic mean, seconds) over all last-conv channels."""
    import time

    from selfverify.ascent import AscentConfig
    from selfverify.introspection import regularization_contrast
    start = time.perf_counter()
    per, plain, sem = regularization_contrast(desk_image, AscentConfig(steps=256), seed=AM_SEED)
    return per, plain, sem, time.perf_counter() - start


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
