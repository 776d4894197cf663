import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from armcollect.geometry import Pose, UnitQuat, Vec3
from armcollect.kinematics import Joint, JointLimits, KinematicChain, default_chain
from armcollect.scene import default_scene_path, load_scene
from armcollect.session import confirm_placement, new_session, propose_placement


@pytest.fixture(scope="session")
def panda():
    return default_chain()


@pytest.fixture(scope="session")
def table_scene():
    return load_scene(default_scene_path("table.scene"))


@pytest.fixture(scope="session")
def obstacle_scene():
    return load_scene(default_scene_path("obstacle.scene"))


@pytest.fixture
def collecting_session(panda, table_scene):
    """A session placed at (0.3, 0, 0) and ready to collect."""
    s = new_session(panda)
    s = propose_placement(s, Vec3(0.3, 0.0, 0.4))
    return confirm_placement(s, table_scene)


def single_joint_chain(link_z=0.3, tool=Pose.identity()):
    """One revolute joint about z, fixed transform translating up link_z."""
    return KinematicChain(
        joints=(Joint(Pose(Vec3(0.0, 0.0, link_z), UnitQuat.identity()), Vec3(0.0, 0.0, 1.0)),),
        tool=tool,
        limits=JointLimits((-3.0,), (3.0,)),
        reach_min=0.0,
        reach_max=2.0,
        end_effector_dims=(0.1, 0.05),
        link_radii=(0.05, 0.05),
        home=(0.0,),
    )


def random_configs(chain, rng, n):
    lo = np.array(chain.limits.min_angles)
    hi = np.array(chain.limits.max_angles)
    return [tuple((lo + rng.random(chain.n_joints) * (hi - lo)).tolist()) for _ in range(n)]
