import json
import time

import pytest

from perifix import certify, genereg, model
from perifix.cli import run_command


@pytest.fixture(scope="session")
def reference_model():
    return model.load_model(genereg.reference_config())


@pytest.fixture(scope="session")
def reference_doubled(reference_model):
    return model.build_doubled(reference_model)


@pytest.fixture(scope="session")
def reference_certificate(reference_model, reference_doubled):
    box = reference_model.X
    return certify.bracket_converge(
        reference_doubled, box.lo, box.hi,
        tol=1e-6, residual_tol=1e-8, max_iters=500,
    )


@pytest.fixture(scope="session")
def reproduction(tmp_path_factory):
    """One full CLI reproduce-paper run, shared by CLI and acceptance tests.

    Returns (exit_code, output_dir, report_dict, elapsed_seconds).
    """
    outdir = tmp_path_factory.mktemp("reproduction")
    start = time.perf_counter()
    code = run_command(["reproduce-paper", "--outdir", str(outdir)])
    elapsed = time.perf_counter() - start
    report = None
    if (outdir / "report.json").exists():
        report = json.loads((outdir / "report.json").read_text())
    return code, outdir, report, elapsed
