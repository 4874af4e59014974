"""Fitting the stiff scalar problem with and without random end times.

Each run trains a 500-unit net for 400 epochs (about 1.5 min per run on a
laptop core). Set EPOCHS lower for a quick look.

Run: python3 demos/03_stiff_steer.py
"""
from dataclasses import replace

from steerode.report import emit_svg
from steerode.stiff import TrainConfig, train

EPOCHS = 400
base = TrainConfig(r=1000.0, epochs=EPOCHS, eval_every=20, seed=0)

# %% Vanilla fixed end time against uniform end times with b = 0.124.
results = {}
for label, cfg in (("vanilla", base), ("b=0.124", replace(base, b=0.124))):
    rec, _ = train(cfg)
    results[label] = rec
    print(f"{label:8s} min test MSE {rec.min_test_mse:.4f} at epoch {rec.min_epoch}, "
          f"gap to steady state {rec.final_gap:.3f}, training nfe {rec.total_nfe}")

# %% Predicted trajectories of the best models.
series = []
ev = results["vanilla"].history["best_eval"]
series.append(("true", list(zip(ev.times[::10], ev.y_true[::10]))))
for label, rec in results.items():
    ev = rec.history["best_eval"]
    series.append((label, list(zip(ev.times[::10], ev.y_pred[::10]))))
print("wrote", emit_svg(series, "stiff_demo.svg", title="stiff r=1000", xlabel="t", ylabel="y"))
