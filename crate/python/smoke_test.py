"""Smoke test for the pybunchlab extension.

Build and run from the repository root:

    cargo build --release -p bunchlab-py --features extension-module
    cp target/release/libpybunchlab.so python/pybunchlab.so
    python3 python/smoke_test.py
"""

import math
import pathlib
import random
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import pybunchlab as bl  # noqa: E402

CONFIGS = HERE.parent / "configs"


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        raise SystemExit(1)


def main():
    fsr, fwhm = bl.etalon(0.5e-3, 1.46, 0.97)
    check(abs(fsr - 205.3e9) < 0.5e9 and abs(fwhm - 1.98e9) < 0.05e9, f"etalon FSR {fsr:.4e} Hz, FWHM {fwhm:.4e} Hz")

    rng = random.Random(3)

    def stream(n):
        t, out = 0, []
        for _ in range(n):
            t += rng.randrange(0, 500)
            out.append(t)
        return out

    a, b = stream(2000), stream(2000)
    h = bl.correlate(a, b, 16e-12, 1.6e-9)
    check(h.counts == bl.brute_force(a, b, 16e-12, 1.6e-9), f"correlate matches brute force ({h.total()} pairs)")
    check(bl.Histogram.from_csv(h.to_csv()).counts == h.counts, "histogram CSV round trip")

    tau = [(i - 199.5) * 20e-12 for i in range(400)]
    counts = [1000 + 800 * math.exp(-2 * abs(t) / 0.436e-9) for t in tau]
    fit = bl.fit_counts(tau, counts)
    check(abs(fit.g2_zero - 1.8) < 1e-6 and abs(fit.tau_c - 0.436e-9) < 1e-15, repr(fit))

    scenario = bl.Scenario.load(str(CONFIGS / "lorentzian_2ghz.toml"))
    tau_c = bl.scenario_coherence_time(scenario)
    check(abs(tau_c * math.pi * 2e9 - 1) < 0.01, f"2 GHz Lorentzian coherence time {tau_c:.4e} s")

    with tempfile.TemporaryDirectory() as d:
        fit = scenario.run(d)
        check(1.9 < fit.g2_zero < 2.1 and fit.converged, f"pipeline fit {fit!r}")
        channel, tags = bl.load_pbt1(str(pathlib.Path(d) / "channel_a.pbt"))
        check(channel == 0 and tags == sorted(tags) and len(tags) > 0, f"PBT1 channel A: {len(tags)} events")

    try:
        bl.Scenario.parse("[source]\nkind = \"flat\"\n")
    except ValueError as e:
        check("grid" in str(e), f"missing section rejected: {e}")
    else:
        check(False, "missing section rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
