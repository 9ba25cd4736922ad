# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # The quadratic neuron
#
# A quadratic neuron replaces the inner product ``x.w + b`` with
#
#     (x.w_r + b_r)(x.w_g + b_g) + (x*x).w_b + c
#
# This script walks through what that buys and what it costs.

# +
import numpy as np

from qcnn.evaluation import attention_param_estimate, backbone_attention_table, count_params
from qcnn.layers import NeuronVariant, quadratic_neuron_forward
from qcnn.network import build_backbone, build_model

# -
# ## XOR with one neuron
#
# No single linear unit separates XOR. A single quadratic one does: the
# product of two linear factors is positive on the diagonal and negative off it.

# +
points = np.array([[0, 0], [1, 1], [0, 1], [1, 0]])
labels = np.array([0, 0, 1, 1])
out = [quadratic_neuron_forward(p, w_r=[1, 1], b_r=-0.5, w_g=[1, 1], b_g=-1.5, w_b=[0, 0], c=0)
       for p in points]
for p, y, o in zip(points, labels, out):
    print(f"x={p}  label={y}  output={o:+.2f}  predicted={int(o < 0)}")

# -
# ## Starting as a conventional network
#
# With ``w_g = 0, b_g = 1, w_b = 0, c = 0`` the neuron is exactly ``x.w_r + b_r``.
# A freshly built QCNN uses that initialization, so its logits equal those of a
# WDCNN that shares the same ``w_r, b_r``.

# +
qcnn, wdcnn = build_model("qcnn", seed=7), build_model("wdcnn", seed=7)
x = np.random.default_rng(0).normal(size=(8, 2048))
diff = np.abs(qcnn.forward(x) - wdcnn.forward(x)).max()
print("max |QCNN - WDCNN| at initialization:", diff)

# -
# ## Parameter cost
#
# Each quadratic conv layer stores three weight tensors where a conventional one
# stores one.

# +
for profile in ("wdcnn", "qcnn", "qcnn-ng", "qcnn-np", "qcnn-aq"):
    counts = count_params(build_model(profile))
    print(f"{profile:8s} total={counts['total']:7d} conv_weights={counts['conv_weights']:7d}")

# -
# A channel-attention block on the first layer (C=16, r=2) needs an MLP of
# ``2 C^5 / r^2`` weights. The quadratic layer gets its attention signal for
# ``3 C H W``.

# +
print(attention_param_estimate(16, 1, 64, r=2))
for row in backbone_attention_table(build_backbone("qcnn"), r=16):
    print(f"{row['layer']}: attention {row['channel_attention']:12.0f}  qttention {row['qttention']:7d}")

# -
# The variants used in the ablation drop one of the two extra terms.

# +
for v in NeuronVariant:
    print(f"{v.name:15s} inner products per neuron: {v.inner_products}")
