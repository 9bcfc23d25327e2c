"""Gray-mask the detected component of a patched frame and check what changed."""
import numpy as np

from vlmguard import apply_gray_mask, build_mask, compute_error_map, detect, mask_iou
from vlmguard.errormap import BlockGrid
from vlmguard.harness.fixtures import AttackKind, AttackSpec, PatchFill, PatchSpec, clean_scene, gen_patch

scene = clean_scene(seed=11)
spec = AttackSpec(AttackKind.PATCH, patch=PatchSpec(32, 48, 32, 128, PatchFill.CHECKER), seed=11)
attacked, truth = gen_patch(scene, spec)

verdict = detect(compute_error_map(attacked))
print("verdict:", verdict.cls.value)
comp = verdict.metrics.largest_component
grid = BlockGrid.for_image(224, 224)

tight = build_mask(comp, grid, dilation=0)
print(f"IoU with the true patch: {mask_iou(tight, truth):.3f}")

mask = build_mask(comp, grid)  # one-block safety margin
clean = apply_gray_mask(attacked, mask)
changed = np.any(clean != attacked, axis=2)
print(f"pixels changed: {changed.sum()}, all inside mask: {not np.any(changed & ~mask)}")
