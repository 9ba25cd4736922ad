# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Accuracy under noise
#
# A reduced version of the noise sweep: four classes, three SNR levels and
# two seeds per cell, trained for a handful of epochs. The command
#
#     python -m qcnn sweep --data synthetic.qbrg --profiles qcnn,wdcnn --runs 10
#
# runs the full grid and writes ``model,snr_db,seed,accuracy`` rows.

# +
import numpy as np

from qcnn.evaluation import confusion, noise_sweep, summarize
from qcnn.network import build_model
from qcnn.signals import make_synthetic_dataset, with_noise
from qcnn.training import TrainConfig, predict, train

classes = ["healthy", "outer_minor", "inner_minor", "ball_minor"]
ds = make_synthetic_dataset(per_class=120, seed=1, duration=4.0, classes=classes)
cfg = TrainConfig(epochs=5, batch_size=32)

# -
rows = noise_sweep(["qcnn", "wdcnn"], ds, snrs=[-4, 0, 6], runs=2, config=cfg)
for (model, snr), (mean, std) in sorted(summarize(rows).items()):
    print(f"{model:6s} {snr:+d} dB  {mean:.3f} +- {std:.3f}")

# -
# ## Which faults get mistaken for healthy?
#
# Rows are true classes, columns predictions.

# +
noisy = with_noise(ds, -4.0, seed=0)
model, _ = train(build_model("qcnn", num_classes=len(classes), seed=0), noisy.train, noisy.val, cfg)
cm = confusion(predict(model, noisy.test.windows), noisy.test.labels, len(classes))
print(cm.counts)
print("faulty windows judged healthy:", cm.fault_judged_healthy())
print("per-class recall:", np.round(cm.recall(), 3))
