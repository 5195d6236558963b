"""Two-stream co-adjustment with a dynamic object.

A patch of the scene translates independently, so the observed flow there
disagrees with any rigid interpretation and the triangulated depth is
badly biased (the control run shows it). Coupling a free flow field to
the rigid flow of the evolving depth pulls the patch flow to quasi-rigid;
the depth triangulated from the adjusted flow then lands much closer to
the true surface.

Only the component of the dynamic motion transverse to the epipolar
direction is unambiguously removable: a flow delta along the epipolar
line is indistinguishable from a depth change, and without a smoothness
or context prior that component stays absorbed. The patch translation
here is chosen transverse for a clean demonstration.
"""

import numpy as np

from flowgeo import (
    CameraIntrinsics,
    DynamicObjectSpec,
    OptimConfig,
    RigidMotion,
    SceneSpec,
    co_adjust,
    depth_metrics,
    recover_depth,
    synthesize,
)

camera = CameraIntrinsics(fx=100.0, fy=98.0, cx=48.0, cy=36.0)
ego = RigidMotion(np.eye(3), [0.31, 0.02, 0.42])  # epipolar flow ~horizontal at the patch
dyn = DynamicObjectSpec(shape="rect", center=(30.0, 26.0), half_size=(10.0, 8.0),
                        translation=(0.0, 0.2, 0.0))  # vertical flow delta
bundle = synthesize(SceneSpec("affine-inverse-shift", a=0.21, b=1.3e-3, c=0.9e-3, dynamic=dyn),
                    camera, ego, 72, 96)

config = OptimConfig(w_p=0.0, w_c=1.0, w_d=0.1, w_b=1.0,
                     iterations=4000, learning_rate=12.0, flow_learning_rate=250.0,
                     dpc_warmup_fraction=0.9, seed=11, record_every=500)
trace = co_adjust(bundle, config)
print("co-adjustment run (w_b=1):")
for record in trace.records:
    e = record.extras
    print(f"  iter {record.iteration:5d}  patch gap {e['patch_flow_gap']:7.3f} px  "
          f"patch abs_rel {e['dynamic_abs_rel']:.4f}  static {e['static_abs_rel']:.4f}")

control = recover_depth(bundle, OptimConfig(w_p=0.0, w_c=1.0, w_d=0.1, w_b=0.0,
                                            iterations=1500, seed=11,
                                            allow_dynamic=True, record_every=500))
ctrl_patch = depth_metrics(control.final_depth, bundle.depth_gt, bundle.dynamic_mask).abs_rel
ctrl_static = depth_metrics(control.final_depth, bundle.depth_gt, bundle.static_mask).abs_rel
print(f"control (w_b=0): patch abs_rel {ctrl_patch:.4f}, static {ctrl_static:.4f}")
final = trace.records[-1].extras
print(f"with co-adjustment the patch improves to {final['dynamic_abs_rel']:.4f} "
      f"and the patch flow is quasi-rigid ({final['patch_flow_gap']:.3f} px from rigid)")
