import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flasc.config import ExperimentConfig
from flasc.lora import Backbone, LoraAdapter, default_shapes

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def random_backbone(rng, dims=(5, 7, 6, 3), scale=0.6) -> Backbone:
    weights, biases = [], []
    for k, d in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((d, k)) * scale)
        biases.append(rng.standard_normal(d) * 0.1)
    return Backbone.from_arrays(weights, biases)


def random_adapter(rng, backbone: Backbone, rank: int, scale=0.3, scaling=1.0) -> LoraAdapter:
    A = [rng.standard_normal((rank, k)) * scale for _, k in backbone.shapes]
    B = [rng.standard_normal((d, rank)) * scale for d, _ in backbone.shapes]
    return LoraAdapter(A, B, scaling)


SMALL_RUN = dict(
    task_source_size=3000, task_train_size=600, task_test_size=300,
    partition_clients=20, clients_per_round=4, rounds=3, lora_rank=4,
)


def small_config(**overrides) -> ExperimentConfig:
    """A few-second federation used by unit tests."""
    return ExperimentConfig(**{**SMALL_RUN, **overrides}).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_shapes():
    return default_shapes()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
