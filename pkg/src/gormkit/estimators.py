"""scikit-learn style wrappers.

``ReachabilityMapEstimator`` builds a map in ``fit`` and predicts the
reachability index of arm-frame positions; ``BasePlacementTransformer`` builds
the candidate distribution for one grasp target and maps base poses to
``(d_min, reward)`` features.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .gorm import Environment, LocomotionLimits, build_gorm, distances, invert_rm
from .kinematics import IkParams, default_arm
from .rmap import GridSpec, build_rm, query_index_batch, query_reachable, sample_orientations
from .transforms import Pose


class ReachabilityMapEstimator(BaseEstimator):
    """Reachability map as an estimator.

    ``fit`` ignores ``X``; ``predict`` takes positions (n, 3) and returns the
    index of the nearest voxel (0 outside the grid).
    """

    def __init__(self, arm=None, half_extent=1.0, spacing=0.05, n_dirs=32, n_rolls=8,
                 seeds_per_pose=3, ik_params=None, random_state=0):
        self.arm = arm
        self.half_extent = half_extent
        self.spacing = spacing
        self.n_dirs = n_dirs
        self.n_rolls = n_rolls
        self.seeds_per_pose = seeds_per_pose
        self.ik_params = ik_params
        self.random_state = random_state

    def fit(self, X=None, y=None):
        arm = self.arm if self.arm is not None else default_arm()
        grid = GridSpec.centered_cube(self.half_extent, self.spacing)
        orient = sample_orientations(self.n_dirs, self.n_rolls)
        self.arm_ = arm
        self.map_ = build_rm(arm, grid, orient, self.ik_params or IkParams(),
                             self.seeds_per_pose, int(self.random_state or 0))
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "map_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns (x, y, z), got {X.shape[1]}")
        return query_index_batch(self.map_, X)

    def predict_reachable(self, X):
        """Stored bit for poses given as rows ``[x, y, z, qw, qx, qy, qz]``."""
        check_is_fitted(self, "map_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 7:
            raise ValueError(f"expected 7 columns (x, y, z, qw, qx, qy, qz), got {X.shape[1]}")
        return np.array([query_reachable(self.map_, Pose.from_array(r)) for r in X])


class BasePlacementTransformer(TransformerMixin, BaseEstimator):
    """Distance and reward features of base poses relative to a grasp target.

    ``transform`` takes world base poses as rows ``[x, y, z, qw, qx, qy, qz]``
    and returns columns ``(d_min, exp(-d_min^2))``.
    """

    def __init__(self, reachability_map=None, target=None, mount=None, limits=None,
                 environment=None, reach_threshold=0.3, lam=1.0, roll_subdivisions=1):
        self.reachability_map = reachability_map
        self.target = target
        self.mount = mount
        self.limits = limits
        self.environment = environment
        self.reach_threshold = reach_threshold
        self.lam = lam
        self.roll_subdivisions = roll_subdivisions

    def fit(self, X=None, y=None):
        if self.reachability_map is None or self.target is None:
            raise ValueError("reachability_map and target are required")
        orm = invert_rm(self.reachability_map, self.mount, self.roll_subdivisions)
        self.gorm_ = build_gorm(orm, self.target, self.limits or LocomotionLimits(),
                                self.environment if self.environment is not None else Environment(),
                                self.reach_threshold)
        self.n_features_in_ = 7
        return self

    def transform(self, X):
        check_is_fitted(self, "gorm_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 7:
            raise ValueError(f"expected 7 columns (x, y, z, qw, qx, qy, qz), got {X.shape[1]}")
        d = np.array([distances(self.gorm_, Pose.from_array(r), self.lam).min() for r in X])
        return np.column_stack([d, np.exp(-d * d)])
