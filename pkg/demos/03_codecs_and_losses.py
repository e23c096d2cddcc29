"""Network-output codecs and the multi-task losses built on them.

Locations are sigmoid-bounded offsets from a proposal center; headings
are a bin class plus an in-bin residual over [0, pi); sizes are a k-means
cluster class plus a residual triple.  The losses mirror the training
rules: objectness gates the proposal-head location term, class agreement
gates the regression residuals, and good proposals gate the whole
box-regression loss.
"""

import numpy as np

import cyldet
from cyldet.synthetic import make_frames

region = cyldet.ProposalRegion(center=(4.0, 1.0, 20.0), radius=2.0,
                               y_extent=(-1.0, 3.0), bounds=(2.0, 2.0, 2.0))

target = np.array([4.8, 0.6, 19.1])
t = cyldet.encode_location(target, region)
print("location: target", target, "-> raw", np.round(t, 4),
      "-> decoded", cyldet.decode_location(t, region))
print("saturated raw (40, 40, 40) decodes to",
      cyldet.decode_location((40.0, 40.0, 40.0), region),
      "(pinned to the region bounds)")

bins = cyldet.RotationBins(12)
logits, residuals = cyldet.encode_rotation(1.0, bins)
print("\nrotation: yaw 1.0 -> bin", int(np.argmax(logits)),
      "residual", round(residuals[np.argmax(logits)], 4),
      "-> decoded", cyldet.decode_rotation(logits, residuals, bins))

# size clusters fitted from synthetic ground truth, then used as anchors
labels = [lab for f in make_frames(20, seed=3) for lab in f.labels]
clusters = cyldet.fit_size_clusters(labels, 3, seed=0)
print("\nfitted size clusters (H W L):")
print(np.round(clusters.centroids, 3), " SSE", round(clusters.sse, 3))
slogits, sres = cyldet.encode_size((1.48, 1.62, 3.95), clusters)
print("dims (1.48, 1.62, 3.95) -> cluster", int(np.argmax(slogits)),
      "-> decoded", np.round(cyldet.decode_size(slogits, sres, clusters), 3))

# proposal-head loss: background proposals only pay the objectness term
pred = cyldet.RpnOutput(t_loc=(0.2, -0.1, 0.3), t_obj=-0.5)
bg = cyldet.rpn_loss(pred, False, target, region)
fg = cyldet.rpn_loss(pred, True, target, region)
print("\nproposal-head loss, background:", round(bg.total, 4),
      " masks", bg.active_masks)
print("proposal-head loss, object:    ", round(fg.total, 4))

# box-head loss vanishes once the proposal already overlaps well
truth = cyldet.Box3D(tuple(target), (1.62, 1.48, 3.95), 1.0)
brn_pred = cyldet.BrnOutput(
    t_loc=(0.1, 0.1, 0.1),
    rot_logits=np.eye(bins.n_bins)[3] * 4.0,
    rot_residuals=np.zeros(bins.n_bins),
    size_logits=np.zeros(clusters.n_clusters),
    size_residuals=np.zeros((clusters.n_clusters, 3)),
)
for gate_iou in (0.3, 0.79, 0.8, 0.95):
    loss = cyldet.brn_loss(brn_pred, truth, region, clusters, bins, gate_iou)
    print(f"box-head loss at proposal IoU {gate_iou:.2f}: {loss.total:.4f}")

# analytic gradients agree with finite differences
grads = cyldet.rpn_loss_gradients(pred, True, target, region)
h = 1e-6
fd = []
for axis in range(3):
    t_hi = np.array(pred.t_loc); t_hi[axis] += h
    t_lo = np.array(pred.t_loc); t_lo[axis] -= h
    fd.append((cyldet.rpn_loss(cyldet.RpnOutput(tuple(t_hi), pred.t_obj),
                               True, target, region).total
               - cyldet.rpn_loss(cyldet.RpnOutput(tuple(t_lo), pred.t_obj),
                                 True, target, region).total) / (2 * h))
print("\nanalytic location gradient:", np.round(grads["t_loc"], 8))
print("finite differences:        ", np.round(fd, 8))
