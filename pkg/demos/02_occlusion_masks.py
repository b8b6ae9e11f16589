"""Which pixels can be trusted? Compare three occlusion masks on an occluder scene.

The feature-correlation mask needs only features and a depth guess; the two
baselines need backward flow or a flow estimate.

Run: python demos/02_occlusion_masks.py
"""

from flowdepth.cli import format_ablation, mask_ablation

for seed in (0, 1):
    print(f"seed {seed}")
    print(format_ablation(mask_ablation(seed)))
    print()
