"""Replica-averaged particle density against the rough-drift PDE."""

from sinai_zrp.harness import ExperimentConfig, hdl_experiment

cfg = ExperimentConfig(Ns=(256, 1024), replicas=8, t_obs=(0.02, 0.05))
rep = hdl_experiment(cfg)
for r in rep.rows:
    print(f"N={r['N']:5d} t={r['t']:.2f}  L1={r['l1']:.4f}  dual={r['dual']:.5f}  "
          f"mass emp/pde={r['mass_emp']:.4f}/{r['mass_pde']:.4f}")
print("\n".join(rep.lines()))
