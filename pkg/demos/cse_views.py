"""The two perturbed views CSE trains on, built from one synthetic unlabeled volume.

AGR pastes an attention-chosen cube of a labeled image into the unlabeled one.
SMC multiplies a gamma-perturbed copy by a smooth random mask.
"""
import numpy as np

from lightunetr import ModelConfig, build_model, synth_generate
from lightunetr.cse import (
    agr_mix,
    apply_mask,
    attention_region_probs,
    generate_smooth_mask,
    pseudo_label_from_probs,
    sample_region,
    segmentation_probs,
    strong_augment,
)
from lightunetr.tensor import Tensor, no_grad

rng = np.random.default_rng(0)
(img_l, lbl_l), (img_u, _) = synth_generate(2, (32, 32, 32), seed=1)
x_l, y_l, x_u = img_l[None], lbl_l.astype(np.int64), img_u[None]

model = build_model(ModelConfig(crop_size=(32, 32, 32)), seed=0)
with no_grad():
    out = model(Tensor(x_u[None]))
y_u = pseudo_label_from_probs(segmentation_probs(out.logits).data, tau=0.75)[0]
attention = out.attention_map.data[0, 0]

# region probabilities: softmax over mean attention (default) vs raw sums
for mode in ("mean", "sum", "linear"):
    grid = attention_region_probs(attention, alpha=0.65, mode=mode)
    print(f"{mode:6s} patch={grid.patch} regions={grid.probs.size} p_max={grid.probs.max():.4f}")

grid = attention_region_probs(attention, alpha=0.65)
region = sample_region(grid, rng)
mixed_x, mixed_y = agr_mix(x_u, y_u, x_l, y_l, region)
print("AGR region", region.start, region.size, "foreground", int(mixed_y.sum()))

strong = strong_augment(x_u, rng)
mask = generate_smooth_mask((32, 32, 32), side=16, ratio=0.5, rng=rng)
masked = apply_mask(strong, mask.mask)
print(f"SMC coarse grid {mask.coarse.shape} zeros={mask.zero_count} mask mean={mask.mask.mean():.3f}")
print(f"intensity mean: weak={x_u.mean():.3f} strong={strong.mean():.3f} masked={masked.mean():.3f}")
