import numpy as np
import pytest

from udscascade.augmentation import filter_invalid, pseudo_label
from udscascade.graph import AnnotatedSentence
from udscascade.model import ModelConfig, ParserModel, Vocabularies
from udscascade.synthetic import generate_sentences, synthetic_records
from udscascade.training import LossWeights, TrainConfig, train

TINY = dict(embed_dim=8, hidden_dim=8, mlp_dim=8, arc_dim=4, label_dim=4, pair_dim=4, attr_dim=4,
            attr_channels=3, dropout=0.0)

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.failed):
        status = "PASS" if report.passed else "FAIL"
        _criteria[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


# -- small shared fixtures ----------------------------------------------------------

def dogs_chase_cats() -> AnnotatedSentence:
    return AnnotatedSentence.build(["Dogs", "chase", "cats", "."], ["NOUN", "VERB", "NOUN", "PUNCT"],
                                   [2, 2, 2, 2], ["nsubj", "root", "obj", "punct"])


@pytest.fixture(scope="session")
def records():
    return synthetic_records(24, seed=11)


@pytest.fixture(scope="session")
def vocabs(records):
    return Vocabularies.from_records(records, min_count=1)


def tiny_model(vocabs, mode="gcn", seed=0, **overrides) -> ParserModel:
    cfg = ModelConfig(**{**TINY, "syntax_mode": mode, **overrides})
    return ParserModel(cfg, vocabs, np.random.default_rng(seed))


@pytest.fixture
def make_model(vocabs):
    def factory(mode="gcn", seed=0, **overrides):
        return tiny_model(vocabs, mode, seed, **overrides)
    return factory


# -- acceptance corpora (built once per session) ----------------------------------------

@pytest.fixture(scope="session")
def teacher():
    """Syntax-only model that plays the role of the pseudo-labelling parser."""
    syntax_only = LossWeights(cls=0, span=0, edge=0, attr_mask=0, attr_value=0)
    return train(synthetic_records(300, seed=100),
                 TrainConfig(batch_size=16, lr=2e-3, epochs=8, seed=0, eval_every=100),
                 ModelConfig(hidden_dim=64, syntax_mode="multitask", dropout=0.2), syntax_only).model


def pseudo_corpus(teacher_model, n, seed):
    recs, _ = pseudo_label([s.forms for s in generate_sentences(n, seed=seed)], teacher_model)
    kept, _ = filter_invalid(recs)
    return kept
