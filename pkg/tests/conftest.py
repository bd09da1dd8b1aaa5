import numpy as np
import pytest

from styleshift.corpus import SynthSpec, generate_synthetic_corpus
from styleshift.embeddings import BottleneckClassifier, EvalClassifier


@pytest.fixture(scope="session")
def default_corpus():
    return generate_synthetic_corpus(SynthSpec(), np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(num_labels=4, content_vocab_size=40, examples_per_label=300, valid_per_label=40,
                     test_per_label=40)
    return generate_synthetic_corpus(spec, np.random.default_rng(1))


@pytest.fixture(scope="session")
def default_classifiers(default_corpus):
    sc = default_corpus
    clf = BottleneckClassifier(random_state=0).fit(sc.train, validation_data=(sc.valid, None))
    ev = EvalClassifier(random_state=1).fit(sc.train, validation_data=(sc.valid, None))
    return clf, ev


@pytest.fixture(scope="session")
def small_classifier(small_corpus):
    return BottleneckClassifier(max_steps=800, n_buckets=4096, random_state=0).fit(small_corpus.train)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
