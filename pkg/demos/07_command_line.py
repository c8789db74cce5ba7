"""The command line: run, verify and convergence on a shipped scenario.

Writes into a temporary directory and lists the artifacts; the same calls
are available from a shell as ``krmcf run diagonal-flat --out DIR`` etc.
"""

import tempfile
from pathlib import Path

from krmcf.cli_io import main, read_ppm, read_series, read_snapshot

out = Path(tempfile.mkdtemp())
code = main(["run", "round-symplectic", "--out", str(out / "run"), "--snapshots", "3"])
print("run exit code", code)
for p in sorted((out / "run").iterdir()):
    print("  ", p.name, p.stat().st_size, "bytes")
series = read_series(out / "run" / "series.csv")
print("series columns:", ", ".join(series))
print("min cos(alpha) over the run:", series["min_cos_alpha"].min())
snap = sorted((out / "run").glob("snap_*.dat"))[-1]
t, fields = read_snapshot(snap)
print(f"last snapshot t = {t}, fields {sorted(fields)}")
img = read_ppm(sorted((out / "run").glob("cos_alpha_*.ppm"))[-1])
print("heat map shape", img.shape)

print("verify exit code", main(["verify", "lagrangian-anti-diagonal", "--out", str(out / "verify")]))
print("convergence exit code",
      main(["convergence", "perturbed-graph-torus", "--levels", "2", "--out", str(out / "conv")]))
print((out / "conv" / "convergence.csv").read_text().splitlines()[0])
