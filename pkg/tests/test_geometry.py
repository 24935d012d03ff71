import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disc.errors import ConfigError
from disc.geometry import (
    CameraRig,
    DepthBinning,
    SceneVolumeSpec,
    generate_frustum,
    project_world_to_image,
    unproject_image_to_world,
    world_to_voxel,
)


def identity_rig(f=100.0, cx=0.0, cy=0.0, w=64, h=48):
    return CameraRig(np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]]), np.eye(4), w, h)


def test_presets():
    full = SceneVolumeSpec.full_scale()
    assert full.dims == (256, 256, 32) and full.extent == (51.2, 51.2, 6.4) and full.voxel_size == 0.2
    desk = SceneVolumeSpec.desk_scale()
    assert desk.dims == (32, 32, 8) and desk.extent == (6.4, 6.4, 1.6)
    assert desk.refined(2).dims == (64, 64, 16)


def test_spec_rejects_inconsistent_extent():
    with pytest.raises(ConfigError):
        SceneVolumeSpec((0, 0, 0), (6.4, 6.4, 1.0), 0.2, (32, 32, 8))


def test_rig_validation():
    with pytest.raises(ConfigError):
        CameraRig(np.array([[1.0, 0, 0], [1, 1, 0], [0, 0, 1]]), np.eye(4), 4, 4)
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ConfigError):
        CameraRig(np.eye(3), bad, 4, 4)


def test_projection_examples():
    u, v, d, ok = project_world_to_image(identity_rig(cx=31.5, cy=23.5), (0, 0, 1))
    assert (u, v, d, ok) == (31.5, 23.5, 1.0, True)
    u, v, d, ok = project_world_to_image(identity_rig(), (1, 0, 2))
    assert (u, v, d) == pytest.approx((50, 0, 2)) and ok
    assert not project_world_to_image(identity_rig(), (1, 0, 0))[3]


def test_unprojection_on_axis():
    np.testing.assert_allclose(unproject_image_to_world(identity_rig(cx=10, cy=7), 10, 7, 3.0), [0, 0, 3.0])


@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(-10, 10), st.floats(-10, 10), st.floats(-2, 2),
       st.floats(0, 63), st.floats(0, 47), st.floats(0.1, 30))
def test_round_trip_random_rigs(yaw, pitch, x, y, z, u, v, d):
    rig = CameraRig.looking_along((x, y, z), yaw, pitch, 40, 45, 31.5, 23.5, 64, 48)
    p = unproject_image_to_world(rig, u, v, d)
    uu, vv, dd, ok = project_world_to_image(rig, p)
    assert ok
    np.testing.assert_allclose(unproject_image_to_world(rig, uu, vv, dd), p, atol=1e-4)
    assert (uu, vv, dd) == pytest.approx((u, v, d), abs=1e-6)


def test_world_to_voxel_examples():
    spec = SceneVolumeSpec.desk_scale()
    assert world_to_voxel(spec, spec.origin) == (0, 0, 0)
    assert world_to_voxel(spec, np.array(spec.origin) + 0.2 * np.array([1.5, 0.5, 0.5])) == (1, 0, 0)
    assert world_to_voxel(spec, (-0.1, 0, 0)) is None
    assert world_to_voxel(spec, (6.4, 1, 1)) is None


@given(st.tuples(*[st.floats(0, 6.39)] * 2, st.floats(0, 1.59)), st.tuples(*[st.integers(-20, 20)] * 3))
def test_world_to_voxel_translation_consistent(p, shift):
    # integer multiples of the voxel keep the shift exactly representable on the grid
    offset = np.array(shift) * 0.25
    a = SceneVolumeSpec((0, 0, 0), (8.0, 8.0, 2.0), 0.25, (32, 32, 8))
    b = SceneVolumeSpec(tuple(offset), (8.0, 8.0, 2.0), 0.25, (32, 32, 8))
    assert world_to_voxel(a, p) == world_to_voxel(b, np.array(p) + offset)


def test_frustum_examples():
    binning = DepthBinning(1.0, 5.0, 4)
    rig = identity_rig(f=10, cx=1.5, cy=1.5, w=4, h=4)
    fr = generate_frustum(rig, binning, 4)
    assert len(fr) == 4
    np.testing.assert_allclose(binning.centers(), [1.5, 2.5, 3.5, 4.5])
    rig = CameraRig.looking_along((0, 0, 1), 0.2, -0.1, 30, 30, 15.5, 11.5, 32, 24)
    fr = generate_frustum(rig, DepthBinning(0.5, 6.0, 8), 4)
    uv, depth, ok = rig.project_many(fr.world)
    assert ok.all()
    assert np.max(np.abs(uv - fr.pixels)) < 0.5
    np.testing.assert_allclose(depth, DepthBinning(0.5, 6.0, 8).centers()[fr.bins])


def test_binning_validation_and_clamp():
    with pytest.raises(ConfigError):
        DepthBinning(0.0, 1.0, 4)
    with pytest.raises(ConfigError):
        DepthBinning(1.0, 2.0, 1)
    b = DepthBinning(1.0, 3.0, 4)
    np.testing.assert_array_equal(b.bin_index(np.array([0.1, 1.0, 1.6, 2.99, 9.0])), [0, 0, 1, 3, 3])
