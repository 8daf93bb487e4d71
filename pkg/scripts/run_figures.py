"""Run every shipped config, reproducing all figure and table datasets.

Fast 1D runs go first so failures surface early; the 2D network runs
(fig10_13, fig11_12_pinn, the drift-recovery tables) dominate the
wall-clock. Pass --fast to skip the 2D runs. Outputs land in each
config's output_dir (under out/ by default), and the two comparison
tables are written next to the runs they compare.
"""

import argparse
import sys
import time
from pathlib import Path

from recon.cli import main as recon

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

RUNS = [
    ("run", "fig2.json"),
    ("run", "fig3.json"),
    ("run", "fig4.json"),
    ("run", "fig5_strong.json"),
    ("sweep", "fig5.json"),
    ("sweep", "fig6.json"),
    ("sweep", "fig7.json"),
    ("sweep", "fig8_9.json"),
]

RUNS_2D = [
    ("sweep", "fig10_13.json"),
    ("sweep", "fig11_12_pinn.json"),
    ("sweep", "table2_ecfm.json"),
    ("sweep", "table2_pinn.json"),
    ("run", "table2_ecfm_c16.json"),
]

COMPARISONS = [
    # strong vs weak reconstructions of the orthogonal model
    (["out/fig6/entry_00", "out/fig6/entry_01"], "out/fig6"),
    # penalty network vs force-minimizing network on the square
    (["out/fig10_13/entry_00", "out/fig10_13/entry_01"], "out/fig10_13"),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fast", action="store_true",
                        help="skip the 2D network runs")
    args = parser.parse_args(argv)

    runs = RUNS if args.fast else RUNS + RUNS_2D
    for op, name in runs:
        t0 = time.time()
        code = recon([op, str(CONFIGS / name)])
        print(f"{op} {name}: exit {code} ({time.time() - t0:.0f}s)",
              flush=True)
        if code != 0:
            return code

    for paths, out in COMPARISONS:
        if args.fast and not all(Path(p).exists() for p in paths):
            continue
        code = recon(["compare", *paths, "--out", out])
        print(f"compare {' '.join(paths)}: exit {code}", flush=True)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
