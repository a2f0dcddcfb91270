import numpy as np
import pytest

from kcscreen import pipeline, synth


@pytest.fixture(scope="session")
def small_corpus():
    """Three control and three kc scenes with their noiseless masks."""
    scenes = []
    for sid, spec in synth.corpus_specs(3, 3, rng_seed=11):
        image, truth = synth.render_scene(spec)
        scenes.append(pipeline.Scene(sid, spec.label, image, synth.noiseless_mask(spec), truth))
    return scenes


@pytest.fixture(scope="session")
def tree(small_corpus):
    t, _, _ = pipeline.train_segmenter(small_corpus)
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_SPEC = synth.SceneSpec(image_size=512, base_gap=22.0, ring_thickness=7.0)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """On-disk 3 + 3 corpus of 512 px scenes."""
    out = tmp_path_factory.mktemp("corpus")
    synth.export_corpus(out, synth.corpus_specs(3, 3, SMALL_SPEC, rng_seed=5))
    return out


@pytest.fixture(scope="session")
def models_dir(corpus_dir, tmp_path_factory):
    from kcscreen import cli

    out = tmp_path_factory.mktemp("models")
    assert cli.main(["train", "--corpus", str(corpus_dir), "--out", str(out)]) == 0
    return out


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
