"""Recover dense depth by gradient descent on the correspondence losses.

The per-pixel depth field starts at a random 0.5x-2x scaling of the truth
and is optimized (through a log-depth bijection) against the triangulated
depth of the flow prior plus the divergence-correlation term. The
photometric-only control on a texture-free scene shows why that is
needed: constant images provide no gradient at all, so the field never
moves and the depth error stalls at the initialization level.
"""

import numpy as np

from flowgeo import CameraIntrinsics, OptimConfig, RigidMotion, SceneSpec, TextureSpec
from flowgeo import recover_depth, synthesize

camera = CameraIntrinsics(fx=100.0, fy=98.0, cx=48.0, cy=36.0)
ego = RigidMotion(np.eye(3), [0.23, 0.11, 0.52])
spec = SceneSpec("affine-inverse-shift", a=0.21, b=1.3e-3, c=0.9e-3)
bundle = synthesize(spec, camera, ego, 72, 96)

config = OptimConfig(w_p=0.0, w_c=1.0, w_d=0.1, w_b=0.0,
                     iterations=2000, seed=11, record_every=250)
trace = recover_depth(bundle, config)
print("correspondence-prior objective (w_c=1, w_d=0.1):")
for record in trace.records:
    losses = "  ".join(f"{k}={v:.3e}" for k, v in sorted(record.losses.items()))
    print(f"  iter {record.iteration:5d}  abs_rel={record.metrics.abs_rel:.5f}  {losses}")
print(f"final abs_rel = {trace.final_metrics.abs_rel:.5f} "
      f"({trace.wall_clock_seconds:.1f} s)")

# control: photometric loss alone on a texture-free scene
bare = synthesize(SceneSpec("affine-inverse-shift", a=0.21, b=1.3e-3, c=0.9e-3,
                            texture=TextureSpec(amplitudes=(), frequencies_u=(),
                                                frequencies_v=(), phases=())),
                  camera, ego, 72, 96)
control = recover_depth(bare, OptimConfig(w_p=1.0, w_c=0.0, w_d=0.0, w_b=0.0,
                                          iterations=300, seed=11, record_every=100))
print(f"photometric-only control on the texture-free variant stalls at "
      f"abs_rel = {control.final_metrics.abs_rel:.3f}")
