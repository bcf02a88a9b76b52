"""Shared fixtures for the test suite.

The acceptance tests record one summary line each; those lines are replayed
after the run so they are visible in plain `pytest -v` output.
"""

import time

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Append a criterion summary line to the end-of-run report."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line("  " + line)


def _write_corpus(root, size, seed):
    from cogen.corpus import (SynthSpec, synth_generate, toy_ontology,
                              write_dialogues)
    spec = SynthSpec(corpus_size=size, seed=seed)
    write_dialogues(root / "corpus.json", synth_generate(spec))
    toy_ontology(spec).save(root / "ontology.txt")
    return str(root / "corpus.json"), str(root / "ontology.txt")


@pytest.fixture(scope="session")
def overfit_world(tmp_path_factory):
    """A 200-dialogue synthetic corpus and a model trained to fit it.

    Warm-up on the act branch, then joint epochs with early stopping on the
    teacher-forced exact-match probe. Shared across the acceptance tests that
    need a converged model.
    """
    from cogen.config import RunConfig
    from cogen.training import build_model, load_data, train

    root = tmp_path_factory.mktemp("overfit")
    corpus, ontology = _write_corpus(root, 200, 0)
    run = RunConfig(corpus=corpus, ontology=ontology, d_model=32, n_layers=2,
                    n_heads=2, epochs=300, warmup_epochs=10, batch_size=32,
                    lr=3e-3, seed=0, stop_exact_match=0.98, stop_check_every=10)
    onto, turns, text_vocab, act_vocab = load_data(run)
    model = build_model(run, text_vocab, act_vocab, onto)
    t0 = time.time()
    _, lines, epochs_done = train(run, model, turns)
    return {"run": run, "model": model, "turns": turns, "lines": lines,
            "epochs_done": epochs_done, "train_seconds": time.time() - t0}


@pytest.fixture(scope="session")
def overfit_decodes(overfit_world):
    """Beam decodes (trigram blocking on the response pass) for every turn."""
    from cogen.evaluate import decode_corpus

    t0 = time.time()
    results = decode_corpus(overfit_world["model"], overfit_world["turns"],
                            overfit_world["run"])
    return {"results": results, "decode_seconds": time.time() - t0}


@pytest.fixture(scope="session")
def small_files(tmp_path_factory):
    """A 12-dialogue corpus for the sweep/ablation/determinism checks."""
    root = tmp_path_factory.mktemp("small")
    return _write_corpus(root, 12, 21)
