import pytest

from depthrescale.synth import SynthSpec, write_dataset

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def synth_manifest(tmp_path_factory):
    """Three-image synthetic dataset shared by the CLI tests."""
    root = tmp_path_factory.mktemp("synth")
    return write_dataset(root, SynthSpec(n_images=3, seed=1))


@pytest.fixture
def report():
    """Record and print one acceptance line, then assert on it."""
    def _report(criterion, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"ACCEPTANCE criterion {criterion}: {status} - {detail}"
        print(line)
        ACCEPTANCE[criterion] = line
        assert passed, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
