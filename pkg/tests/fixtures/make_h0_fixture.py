"""Regenerate the H0 return panel used by the CLI golden test.

``python3 tests/fixtures/make_h0_fixture.py`` writes ``h0_returns.csv``
(n=500 draws from N(0, I_50), seed 42) and ``h0_weights.csv`` (equal weights).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from gmvptest.io import fmt

HERE = Path(__file__).parent


def main() -> None:
    p, n = 50, 500
    x = np.random.default_rng(42).standard_normal((n, p))
    with (HERE / "h0_returns.csv").open("w") as fh:
        fh.write(",".join(f"a{j}" for j in range(p)) + "\n")
        for row in x:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    (HERE / "h0_weights.csv").write_text(",".join(fmt(1.0 / p) for _ in range(p)) + "\n")


if __name__ == "__main__":
    main()
