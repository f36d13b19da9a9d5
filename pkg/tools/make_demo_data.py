"""Regenerate the bundled synthetic soil-style lattice (25 x 10).

Run from the repository root: ``python tools/make_demo_data.py``. The
output is deterministic.
"""

import csv
from pathlib import Path

import numpy as np
from scipy import special

from sqfc.simulate import ma_field

SHAPE = (25, 10)
SEED = 20100
OUT = Path(__file__).resolve().parents[1] / "src" / "sqfc" / "data" / "soil_demo.csv"


def main():
    ss = np.random.SeedSequence(SEED)
    streams = iter(np.random.Generator(np.random.Philox(s)) for s in ss.spawn(16))
    n1, n2 = SHAPE
    i1, i2 = np.meshgrid(np.arange(1, n1 + 1), np.arange(1, n2 + 1), indexing="ij")
    s1, s2 = i1 / n1, i2 / n2

    def field(ell=1):
        return ma_field(next(streams), SHAPE, ell)

    # regime: roughly uniform spread, plus a gentle trend
    ph_lat = 0.9 * (special.ndtr(field()) - 0.5)
    ph = 4.6 + ph_lat + 0.3 * s1 - 0.2 * s2**2

    chem = {
        "Ca": (3.0, 0.6, 0.8 * s1 - 0.4 * s2),
        "Mg": (1.2, 0.3, 0.3 * s2 + 0.2 * s1 * s2),
        "K": (0.25, 0.05, 0.05 * s1**2),
        "Al": (0.4, 0.15, -0.2 * s1 + 0.1 * s2),
        "C": (15.0, 2.0, 2.0 * s2 - 1.5 * s1**3),
        "N": (1.3, 0.2, 0.1 * s1 + 0.1 * s2),
    }
    lat = {k: field() for k in chem}
    cols = {k: m + sd * lat[k] + tr for k, (m, sd, tr) in chem.items()}

    u = ph_lat
    y_lat = (
        1.2 * np.sin(3.0 * np.pi * u)
        + (0.9 + 1.0 * np.sin(3.0 * np.pi * u)) * lat["Ca"]
        + 0.5 * lat["Mg"]
        + (0.3 - 0.4 * u) * lat["K"]
        - 0.4 * lat["Al"]
        + (0.6 + 3.0 * u**2) * lat["C"]
        + 0.3 * lat["N"]
        + 0.5 * field()
    )
    ctc = 9.0 + y_lat + 1.2 * s1 - 0.8 * s2 + 0.5 * s1 * s2

    header = ["Linha", "Coluna", "pHKCl", *chem, "CTC"]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a in range(n1):
            for b in range(n2):
                w.writerow([a + 1, b + 1, f"{ph[a, b]:.4f}",
                            *(f"{cols[k][a, b]:.4f}" for k in chem), f"{ctc[a, b]:.4f}"])
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
