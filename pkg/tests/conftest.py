import pytest

from sau.config import ExperimentConfig
from sau.eval_harness import prepare_base
from sau.models import ModelConfig, build_model, gen_facts, train

# small task used by unit tests; the bundled recipe is exercised in test_acceptance
TINY = dict(n_facts=40, vocab=12, key_len=3, val_len=2, forget_fraction=0.2)


@pytest.fixture(scope="session")
def tiny_data():
    return gen_facts(seed=5, **TINY)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(arch="char_lm", vocab=12, key_len=3, val_len=2, embed_dim=8, hidden=(32, 32), seed=1)


@pytest.fixture(scope="session")
def tiny_model(tiny_data, tiny_config):
    model = build_model(tiny_config)
    return model.with_params(train(model, tiny_data, lr=0.2, epochs=60, batch_size=8, seed=3).params)


@pytest.fixture(scope="session")
def tiny_experiment():
    return ExperimentConfig(n_facts=40, vocab=12, key_len=3, val_len=2, forget_fraction=0.2,
                            embed_dim=8, hidden=[32, 32], train_lr=0.2, train_epochs=60,
                            train_batch_size=8, epochs=5, forget_batch_size=8, retain_batch_size=8,
                            sparsity_list=[0.0, 0.5], seeds=[0, 1], k_list=[0.3, 1.0],
                            calibration_size=8)


@pytest.fixture(scope="session")
def tiny_base(tiny_experiment):
    return prepare_base(tiny_experiment)


@pytest.fixture(scope="session")
def bundled_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def bundled_base(bundled_config):
    return prepare_base(bundled_config)


# -- acceptance reporting -----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def record(criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"ACCEPTANCE {criterion:2d} {'PASS' if passed else 'FAIL'}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
