from collections.abc import Callable

import numpy as np
import pytest

from egoplex.ep_body import BodyModelDef, PoseShapeParams, make_toy_model
from egoplex.ep_camera import FisheyeCamera, make_toy_camera


@pytest.fixture(scope="session")
def toy_camera() -> FisheyeCamera:
    return make_toy_camera()


@pytest.fixture(scope="session")
def body16() -> BodyModelDef:
    return make_toy_model("body16")


@pytest.fixture(scope="session")
def wholebody22() -> BodyModelDef:
    return make_toy_model("wholebody22")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


ParamsFactory = Callable[..., PoseShapeParams]


@pytest.fixture
def make_params(rng: np.random.Generator) -> ParamsFactory:
    """Случайные параметры в тех же границах, что у генератора датасетов"""

    def factory(
        model: BodyModelDef,
        pose_scale: float = 0.5,
        shape_scale: float = 1.0,
        translation: tuple[float, float, float] = (0.0, 0.0, 2.5),
    ) -> PoseShapeParams:
        pose = rng.uniform(-pose_scale, pose_scale, size=3 * model.joint_count)
        beta = np.clip(rng.standard_normal(model.shape_dim) * shape_scale, -1.0, 1.0)
        return PoseShapeParams.from_full_pose(model, pose, beta, np.asarray(translation))

    return factory
