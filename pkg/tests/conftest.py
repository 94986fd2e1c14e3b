import pytest

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Call with (number, passed, detail); lines are echoed in the run summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA, key=lambda x: x[0]):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny():
    """A short synthetic sequence and its encoding, shared by the codec tests."""
    from eigenavatar import pipeline, synth
    from eigenavatar.regress import TrainConfig

    seq = synth.generate(synth.SynthConfig(seed=5, n_frames=8, image_size=48))
    cfg = pipeline.EncodeConfig(L=3, T=3, deform_train=TrainConfig(iterations=50),
                                texture_train=TrainConfig(iterations=20))
    data = pipeline.SequenceData.from_synth(seq)
    return seq, data, cfg, pipeline.encode(data, cfg)
