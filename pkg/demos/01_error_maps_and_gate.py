"""Block error maps and the three-way gate on a clean, a noisy and a patched scene."""
import numpy as np

from vlmguard import GateThresholds, compute_error_map, compute_metrics, dual_gate
from vlmguard.harness.fixtures import AttackKind, AttackSpec, PatchSpec, clean_scene, gen_global, gen_patch

scene = clean_scene(seed=3)
noisy = gen_global(scene, AttackSpec(AttackKind.GLOBAL_UNIFORM, epsilon=8 / 255, seed=3))
patched, _ = gen_patch(scene, AttackSpec(AttackKind.PATCH, patch=PatchSpec(48, 48, 96, 64), seed=3))

# magnitude threshold on the scale of these synthetic scenes
th = GateThresholds(t_s=5e-5, t_cc1=0.65, t_cc2=0.32)

for name, img in [("clean", scene), ("global", noisy), ("patch", patched)]:
    emap = compute_error_map(img)
    m = compute_metrics(emap, th)
    v = dual_gate(m, th)
    print(f"{name:7s} M={m.m_anom:.2e}  h_norm={m.h_norm:.3f}  C_enh={m.c_enh:.3f}  -> {v.cls.value}")

# the patch shows up as a compact hot region in the 14x14 loss grid
grid = compute_error_map(patched).grid
print(np.array2string(grid / grid.max(), precision=1, max_line_width=120, suppress_small=True))
