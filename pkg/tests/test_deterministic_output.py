"""Assert repeated command line runs with the same seed produce the same files."""

import subprocess
import sys
import tempfile
from pathlib import Path


def _run(*args: str) -> None:
    try:
        _ = subprocess.check_output(  # noqa: S603
            [sys.executable, "-m", "chaoscast", *args],
            stderr=subprocess.STDOUT,
            shell=False,
        )
    except subprocess.CalledProcessError as e:
        print("Command output:")  # noqa: T201
        print("=" * 70)  # noqa: T201
        print(e.output)  # noqa: T201
        print("=" * 70)  # noqa: T201
        raise


def test() -> None:
    tmp_base = Path(tempfile.mkdtemp())
    # trade-off between test duration and probability of false negative
    n_tests = 2
    outputs = []
    for i in range(n_tests):
        city = tmp_base / f"city{i}"
        profile = tmp_base / f"profile{i}.json"
        gen = ["gen", "--system", "lorenz", "--params", "burn_in=200", "-n", "400"]
        _run(*gen, "--nodes", "3", "--seed", "5", "--out", str(city))
        _run("analyze", "--input", str(city / "readings.csv"), "--out", str(profile))
        outputs.append(
            ((city / "readings.csv").read_bytes(), profile.read_text(encoding="utf-8"))
        )
    for output in outputs[1:]:
        assert output == outputs[0]
