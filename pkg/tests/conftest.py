"""Shared fixtures: the pinned desk-scale run used across the suite.

Training the pinned model takes well under a second, but several files
need the same artifacts, so they are built once per session. Tests must
not mutate the shared net; anything that trains or edits parameters
works on its own copy.
"""

import copy
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spod.data import SyntheticSpec, generate_synthetic
from spod.detector import DetectorConfig, fit
from spod.nn import mlp, train_sgd

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# one measured line per acceptance criterion, echoed after the run so
# the numbers survive pytest's output capture
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_line():
    def record(number: int, message: str) -> None:
        line = f"[criterion {number:02d}] PASS: {message}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

# the pinned end-to-end configuration; mirrors the packaged defaults
PINNED = dict(
    seed=7,
    num_classes=5,
    input_dim=32,
    samples_per_class=100,
    mean_scale=3.0,
    noise_sigma=1.0,
    hidden=[64],
    epochs=150,
    lr=0.05,
    momentum=0.9,
    weight_decay=5e-4,
    batch_size=120,
)


@pytest.fixture(scope="session")
def pinned_run():
    spec = SyntheticSpec(
        num_classes=PINNED["num_classes"],
        input_dim=PINNED["input_dim"],
        samples_per_class=PINNED["samples_per_class"],
        mean_scale=PINNED["mean_scale"],
        noise_sigma=PINNED["noise_sigma"],
        ood_mode="shifted_means",
        seed=PINNED["seed"],
    )
    bundle = generate_synthetic(spec)
    ortho = generate_synthetic(
        SyntheticSpec(
            num_classes=PINNED["num_classes"],
            input_dim=PINNED["input_dim"],
            samples_per_class=PINNED["samples_per_class"],
            mean_scale=PINNED["mean_scale"],
            noise_sigma=PINNED["noise_sigma"],
            ood_mode="orthogonal_subspace",
            seed=PINNED["seed"],
        )
    )
    net_init = mlp(
        PINNED["input_dim"], PINNED["hidden"], PINNED["num_classes"],
        activation="relu", seed=PINNED["seed"],
    )
    net = copy.deepcopy(net_init)
    log = train_sgd(
        net, bundle.id_train,
        epochs=PINNED["epochs"], lr=PINNED["lr"], momentum=PINNED["momentum"],
        weight_decay=PINNED["weight_decay"], seed=PINNED["seed"],
        batch_size=PINNED["batch_size"],
    )
    state = fit(net, bundle.id_train, DetectorConfig())
    return SimpleNamespace(
        spec=spec, bundle=bundle, ood_orthogonal=ortho.ood,
        net_init=net_init, net=net, log=log, state=state,
    )


@pytest.fixture()
def tiny_net():
    """A small trained model for cheap per-test fits."""
    spec = SyntheticSpec(num_classes=3, input_dim=8, samples_per_class=30,
                         mean_scale=3.0, noise_sigma=0.8, seed=11)
    bundle = generate_synthetic(spec)
    net = mlp(8, [10], 3, seed=11)
    train_sgd(net, bundle.id_train, epochs=60, lr=0.05, seed=11)
    return SimpleNamespace(spec=spec, bundle=bundle, net=net)
