"""
Drive the sweep command from Python: worker counts 2 and 4 against two
seeds, then read the summary it wrote. Equivalent shell invocation:

    eglab sweep --config configs/desk_synthetic.yaml \
        --axis workers=2,4 --seeds 1,2 --out /tmp/worker_sweep
"""

import pathlib
import shutil
import tempfile

from eglab import cli

out = pathlib.Path(tempfile.mkdtemp(prefix="worker_sweep_")) / "grid"
cfg = pathlib.Path(__file__).resolve().parent.parent / "configs" / "desk_synthetic.yaml"

code = cli.main([
    "sweep",
    "--config", str(cfg),
    "--axis", "workers=2,4",
    "--seeds", "1,2",
    "--out", str(out),
])
print("exit code", code)

print("\ncells:", sorted(p.name for p in out.iterdir() if p.is_dir()))
print("\nsummary.csv:")
print((out / "summary.csv").read_text())

# each cell directory holds metrics.csv (the full learning trace),
# checkpoint.bin (final per-worker parameters) and config.yaml (the fully
# resolved configuration that reproduces the cell)
cell = next(p for p in sorted(out.iterdir()) if p.is_dir())
print("one cell's files:", sorted(f.name for f in cell.iterdir()))

shutil.rmtree(out.parent)
