import numpy as np
import pytest

from anchormatch.anchors import AnchorSet
from anchormatch.network import ModelConfig, ModelParams

TINY = dict(coarse_dim=8, fine_dim=8, stem_widths=(4, 8), n_layers=2, heads=2, pos_dim=8)


def tiny_params(seed=0, randomize_residuals=True, **overrides) -> ModelParams:
    """Small model; residual output projections get random values so every path is live."""
    params = ModelParams.init(ModelConfig(**{**TINY, **overrides, "init_seed": seed}))
    if randomize_residuals:
        rng = np.random.default_rng(seed + 1000)
        for name, t in params.tensors.items():
            if name.endswith((".wout", ".ffn.w2", ".corr.w2")):
                t.data[...] = rng.normal(scale=0.3, size=t.shape)
    return params


def random_anchors(rng, k) -> AnchorSet:
    return AnchorSet(rng.uniform(size=(k, 2)), rng.uniform(size=(k, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_VERDICTS: dict[int, str] = {}


def record_verdict(criterion: int, ok: bool, detail: str) -> None:
    """Store the one-line result of an acceptance criterion for the terminal summary."""
    _VERDICTS[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(_VERDICTS[criterion])


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
