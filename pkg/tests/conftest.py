import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bsnn.convert import convert_to_snn, quantize_model  # noqa: E402
from bsnn.train_toy import ToyConfig, gen_dataset, train  # noqa: E402


@functools.lru_cache(maxsize=None)
def trained(mode: str = "bayesian", seed: int = 0):
    """(checkpoint, deploy model, held-out test set) for a default toy run, cached per session."""
    cfg = ToyConfig(mode=mode, seed=seed)
    ckpt = train(cfg)
    model = quantize_model(convert_to_snn(ckpt))
    test = gen_dataset(cfg.dataset, cfg.n_test, cfg.seed + 1_000_003, cfg.classes)
    return ckpt, model, test


@pytest.fixture(scope="session")
def bayes_toy():
    return trained("bayesian", 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[num])
