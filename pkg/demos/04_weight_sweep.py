"""Effect of the structural weight on label overlap and field regularity.

Sweeps the label-supervision weight kappa over two synthetic pairs and
prints the resulting Dice / folding table.  Inter-subject pairs (different
seeds, shared label scheme) make the supervision actually matter.  Uses
small volumes so the sweep stays quick; expect a few minutes.

    python3 demos/04_weight_sweep.py
"""

from jointreg.optimize import RegistrationConfig, sweep
from jointreg.synth import make_phantom

kw = dict(size=32, n_labels=4, mesh_subdiv=2, harmonic_amp=0.15)
pairs = [
    (make_phantom(900 + s, **kw), make_phantom(950 + s, **kw)) for s in range(2)
]

# quarter-size steps keep the heavily supervised runs from overshooting
cfg = RegistrationConfig(step_size=2.5e-3)
rows = sweep(cfg, (0.0, 1.0, 10.0), pairs)

print(f"{'kappa':>6} {'mean_dice':>10} {'pct_folds':>10} {'sd_log_detj':>12}")
for r in rows:
    print(f"{r.kappa:>6.1f} {r.mean_dice:>10.4f} "
          f"{r.mean_pct_folds:>10.3g} {r.mean_sd_log_detj:>12.4f}")

print("\nany label supervision lifts overlap well above the unsupervised run; "
      "past that the return flattens while sd_log_detj creeps up — the field "
      "is working harder for its last few Dice points")
