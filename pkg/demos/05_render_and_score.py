"""
Rendering masks and scoring them
================================

A segmentation is splatted into each held-out view and compared with the
ground truth. Every 8th frame is held out.
"""
from echoseg.mask_lifting import Segmentation
from echoseg.render_eval import evaluate, iou, render_mask, split_indices
from echoseg.synthscene import build_dataset, two_instance_spec

ds = build_dataset(two_instance_spec(seed=3, clutter_count=1000))
train, test = split_indices(len(ds.poses))
print(f"{len(train)} train frames, {len(test)} test frames: {test}")

frames = [(ds.poses[i], ds.gt_masks[i]) for i in test]
perfect = evaluate(ds.cloud, ds.gt_segmentation, frames)
print("ground-truth segmentation:\n" + perfect.to_text())

# the emitter plus its silent twin
both = Segmentation(list(ds.object_indices("clock_a")) + list(ds.object_indices("clock_b")))
print("both instances:\n" + evaluate(ds.cloud, both, frames).to_text())

# the emitter is out of shot in some frames; look at one where it is visible
k = next(k for k, (_, gt) in enumerate(frames) if gt.data.any())
pose, gt = frames[k]
pred = render_mask(ds.cloud, both, pose)
print(f"frame {test[k]}: {int(pred.data.sum())} predicted pixels, "
      f"{int(gt.data.sum())} true, IoU {iou(pred, gt):.3f}")
