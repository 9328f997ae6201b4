# %% [markdown]
# # IMU intrinsics from a few static poses
#
# Put the IMU down on each of its six faces, record a while and the
# accelerometer's scale and bias fall out of a gravity-magnitude fit.
# The gyro only sees its bias when nothing rotates, so its scale stays
# unknown and is reported that way.

# %%
import numpy as np

from ctcalib.estimator.intrinsics import calibrate_imu_intrinsics_stationary
from ctcalib.sensors import ImuIntrinsics
from ctcalib.sim import simulate_stationary, six_face_directions

truth = ImuIntrinsics(M_a=np.diag([1.004, 0.997, 1.002]), b_a=[0.05, -0.02, 0.03], b_w=[2e-3, -1e-3, 5e-4])
pieces, _ = simulate_stationary(truth, six_face_directions(), seed=0)
cal = calibrate_imu_intrinsics_stationary(pieces)

print("accel scale:", np.round(np.diag(cal.intrinsics.M_a), 5), "true", np.diag(truth.M_a))
print("accel bias: ", np.round(cal.intrinsics.b_a, 5), "true", truth.b_a)
print("gyro bias:  ", np.round(cal.intrinsics.b_w, 6), "true", truth.b_w)
for note in cal.unobservable:
    print("not estimated:", note)

# %% [markdown]
# A piece that was not actually still gets dropped before the fit.

# %%
dirs = np.vstack([six_face_directions(), [[0.6, 0.8, 0.0]]])
pieces, _ = simulate_stationary(truth, dirs, seed=1, moving=(6,))
cal = calibrate_imu_intrinsics_stationary(pieces)
print("rejected pieces:", cal.rejected)
