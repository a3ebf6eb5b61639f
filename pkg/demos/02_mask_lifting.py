"""
Lifting 2D masks onto Gaussians
===============================

Each Gaussian votes once per frame: inside the mask, in the background, or
out of view. Out-of-view frames abstain, so a Gaussian is kept when at
least tau_voting of the frames that see it place it inside the mask.
"""
import numpy as np

from echoseg.mask_lifting import VotingConfig, tally_votes
from echoseg.synthscene import build_dataset, two_instance_spec

spec = two_instance_spec(seed=1, frame_count=40, clutter_count=1000)
ds = build_dataset(spec)
emitter = set(ds.gt_segmentation.selected.tolist())

tally = tally_votes(ds.cloud, ds.views("pred"))
print("median frames that see a Gaussian:", int(np.median(tally.visible)))

for tau in (0.1, 0.3, 0.6, 0.9):
    seg = tally.select(tau)
    hit = len(seg.as_set() & emitter) / len(emitter)
    print(f"tau={tau:.1f}: {len(seg):5d} selected, {hit:6.1%} of the emitter, "
          f"{len(seg.as_set() - emitter):5d} others")

# clean masks are a useful reference point
clean = tally_votes(ds.cloud, ds.views("gt")).select(VotingConfig().tau_voting)
print("from ground-truth masks:", len(clean), "selected,",
      f"{len(clean.as_set() & emitter) / len(emitter):.1%} of the emitter")
